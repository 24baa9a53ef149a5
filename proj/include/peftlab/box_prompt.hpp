#pragma once

#include <string>

#include "peftlab/errors.hpp"

namespace peftlab {

// Pixel-edge box, exclusive upper corner: spans pixels [x0, x1) x [y0, y1).
struct BoxPrompt {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    void validate(int img_size) const {
        if (!(0 <= x0 && x0 < x1 && x1 <= img_size && 0 <= y0 && y0 < y1 && y1 <= img_size)) {
            throw ValidationError("box prompt (" + std::to_string(x0) + "," + std::to_string(y0) +
                                  "," + std::to_string(x1) + "," + std::to_string(y1) +
                                  ") invalid for image size " + std::to_string(img_size));
        }
    }

    bool operator==(const BoxPrompt&) const = default;
};

}  // namespace peftlab
