#include "peftlab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "peftlab/tensor_io.hpp"

namespace peftlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

enum Field : std::uint64_t {
    kGeometry = 1,
    kIntensity = 2,
    kNoise = 3,
    kTarget = 4,
    kPerturb = 5,
};

std::uint64_t scenario_salt(Scenario sc) {
    return (static_cast<std::uint64_t>(sc) + 1) * 0x9E3779B97F4A7C15ull;
}

struct Instance {
    std::vector<std::uint8_t> mask;  // S*S
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double intensity = 0.0;
};

bool boxes_clash(int ax0, int ay0, int ax1, int ay1, const Instance& b, int gap) {
    return !(ax1 + gap <= b.x0 || b.x1 + gap <= ax0 || ay1 + gap <= b.y0 || b.y1 + gap <= ay0);
}

Instance raster_rect(int S, int x, int y, int w, int h) {
    Instance ins;
    ins.mask.assign(static_cast<std::size_t>(S) * S, 0);
    for (int yy = y; yy < y + h; ++yy) {
        for (int xx = x; xx < x + w; ++xx) ins.mask[static_cast<std::size_t>(yy) * S + xx] = 1;
    }
    ins.x0 = x;
    ins.y0 = y;
    ins.x1 = x + w;
    ins.y1 = y + h;
    return ins;
}

Instance raster_ellipse(int S, double cx, double cy, double ax, double ay) {
    Instance ins;
    ins.mask.assign(static_cast<std::size_t>(S) * S, 0);
    ins.x0 = S;
    ins.y0 = S;
    ins.x1 = 0;
    ins.y1 = 0;
    const int ylo = std::max(0, static_cast<int>(std::floor(cy - ay - 1)));
    const int yhi = std::min(S - 1, static_cast<int>(std::ceil(cy + ay + 1)));
    const int xlo = std::max(0, static_cast<int>(std::floor(cx - ax - 1)));
    const int xhi = std::min(S - 1, static_cast<int>(std::ceil(cx + ax + 1)));
    for (int y = ylo; y <= yhi; ++y) {
        for (int x = xlo; x <= xhi; ++x) {
            const double dx = (x + 0.5 - cx) / ax;
            const double dy = (y + 0.5 - cy) / ay;
            if (dx * dx + dy * dy <= 1.0) {
                ins.mask[static_cast<std::size_t>(y) * S + x] = 1;
                ins.x0 = std::min(ins.x0, x);
                ins.y0 = std::min(ins.y0, y);
                ins.x1 = std::max(ins.x1, x + 1);
                ins.y1 = std::max(ins.y1, y + 1);
            }
        }
    }
    return ins;
}

// Try random placements first, then a deterministic grid scan so
// placement never fails while free space exists.
bool place(std::vector<Instance>& placed, Instance (*raster)(int, int, int, int, int), int S,
           int w, int h, Rng& rng, Instance& out) {
    const int margin = 2;
    const int xmax = S - margin - w, ymax = S - margin - h;
    if (xmax < margin || ymax < margin) return false;
    auto fits = [&](int x, int y) {
        for (const auto& other : placed) {
            if (boxes_clash(x, y, x + w, y + h, other, 2)) return false;
        }
        return true;
    };
    for (int attempt = 0; attempt < 200; ++attempt) {
        const int x = rng.uniform_int(margin, xmax);
        const int y = rng.uniform_int(margin, ymax);
        if (fits(x, y)) {
            out = raster(S, x, y, w, h);
            return true;
        }
    }
    for (int y = margin; y <= ymax; y += 2) {
        for (int x = margin; x <= xmax; x += 2) {
            if (fits(x, y)) {
                out = raster(S, x, y, w, h);
                return true;
            }
        }
    }
    return false;
}

Instance raster_rect_adapter(int S, int x, int y, int w, int h) { return raster_rect(S, x, y, w, h); }

struct Scene {
    std::vector<Instance> instances;
    std::vector<double> image;  // S*S
};

void add_gaussian_noise(std::vector<double>& img, double sigma, Rng& rng) {
    for (auto& v : img) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
}

void add_speckle_noise(std::vector<double>& img, double sigma, Rng& rng) {
    for (auto& v : img) v = std::clamp(v * (1.0 + sigma * rng.normal()), 0.0, 1.0);
}

// Base and Natural share the machinery; Natural shifts sizes and aspects.
Scene make_shape_scene(Scenario sc, int S, Rng& geo, Rng& inten, Rng& noise) {
    const bool natural = sc == Scenario::Natural;
    Scene scene;
    const double bg = natural ? inten.uniform(0.10, 0.30) : inten.uniform(0.05, 0.20);
    scene.image.assign(static_cast<std::size_t>(S) * S, bg);

    const int count = geo.uniform_int(1, 3);
    const double frac = natural ? geo.uniform(0.08, 0.25) : geo.uniform(0.09, 0.28);
    const double per_area = frac * S * S / count;

    for (int i = 0; i < count; ++i) {
        const double area = per_area * geo.uniform(0.85, 1.15);
        const double aspect = natural ? geo.uniform(0.33, 3.0) : geo.uniform(0.5, 2.0);
        Instance ins;
        bool ok = false;
        if (geo.coin()) {
            int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 4, 48);
            int h = std::clamp(static_cast<int>(std::lround(area / w)), 4, 48);
            ok = place(scene.instances, raster_rect_adapter, S, w, h, geo, ins);
        } else {
            double ax = std::clamp(std::sqrt(area * aspect / kPi), 2.5, 19.0);
            double ay = std::clamp(area / (kPi * ax), 2.5, 19.0);
            const int w = static_cast<int>(std::ceil(2 * ax)) + 1;
            const int h = static_cast<int>(std::ceil(2 * ay)) + 1;
            Instance box_probe;
            ok = place(scene.instances, raster_rect_adapter, S, w, h, geo, box_probe);
            if (ok) {
                ins = raster_ellipse(S, box_probe.x0 + ax + 0.5, box_probe.y0 + ay + 0.5, ax, ay);
            }
        }
        if (!ok) continue;  // packing failure: keep the instances that fit
        ins.intensity = natural ? inten.uniform(0.45, 0.90) : inten.uniform(0.55, 0.95);
        for (std::size_t px = 0; px < ins.mask.size(); ++px) {
            if (ins.mask[px]) scene.image[px] = ins.intensity;
        }
        scene.instances.push_back(std::move(ins));
    }
    add_gaussian_noise(scene.image, 0.05, noise);
    return scene;
}

Scene make_remote_sensing_scene(int S, Rng& geo, Rng& inten, Rng& noise) {
    Scene scene;
    const double bg = inten.uniform(0.10, 0.25);
    scene.image.assign(static_cast<std::size_t>(S) * S, bg);

    const int count = geo.uniform_int(3, 8);
    const double budget = 901.0 / count * (S * S / 4096.0);
    for (int i = 0; i < count; ++i) {
        const int w = geo.uniform_int(6, 12);
        const int hmin = std::max(5, static_cast<int>(std::ceil(50.0 / w)));
        const int hmax =
            std::max(hmin, std::min(14, static_cast<int>(std::floor(std::min(144.0, budget) / w))));
        const int h = geo.uniform_int(hmin, hmax);
        Instance ins;
        if (!place(scene.instances, raster_rect_adapter, S, w, h, geo, ins)) continue;
        ins.intensity = inten.uniform(0.60, 0.95);
        for (std::size_t px = 0; px < ins.mask.size(); ++px) {
            if (ins.mask[px]) scene.image[px] = ins.intensity;
        }
        scene.instances.push_back(std::move(ins));
    }
    add_gaussian_noise(scene.image, 0.05, noise);
    return scene;
}

Scene make_medical_scene(int S, Rng& geo, Rng& inten, Rng& noise) {
    Scene scene;
    const double bg = inten.uniform(0.15, 0.30);
    scene.image.assign(static_cast<std::size_t>(S) * S, bg);

    const double scale = S / 64.0;
    const double r0 = geo.uniform(9.5, 13.0) * scale;
    const double cx = geo.uniform(S * 0.35, S * 0.65);
    const double cy = geo.uniform(S * 0.35, S * 0.65);
    double amp[3], phase[3];
    for (int k = 0; k < 3; ++k) {
        amp[k] = geo.uniform(-0.05, 0.05);
        phase[k] = geo.uniform(0.0, 2.0 * kPi);
    }
    const double peak = inten.uniform(0.50, 0.80);
    const double edge = geo.uniform(1.2, 2.5);

    Instance ins;
    ins.mask.assign(static_cast<std::size_t>(S) * S, 0);
    ins.x0 = S;
    ins.y0 = S;
    ins.x1 = 0;
    ins.y1 = 0;
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double dist = std::hypot(dx, dy);
            const double theta = std::atan2(dy, dx);
            double r = r0;
            for (int k = 0; k < 3; ++k) r += r0 * amp[k] * std::cos((k + 1) * theta + phase[k]);
            const double soft = 1.0 / (1.0 + std::exp(-(r - dist) / edge));
            scene.image[static_cast<std::size_t>(y) * S + x] = bg + (peak - bg) * soft;
            if (dist <= r) {
                ins.mask[static_cast<std::size_t>(y) * S + x] = 1;
                ins.x0 = std::min(ins.x0, x);
                ins.y0 = std::min(ins.y0, y);
                ins.x1 = std::max(ins.x1, x + 1);
                ins.y1 = std::max(ins.y1, y + 1);
            }
        }
    }
    ins.intensity = peak;
    scene.instances.push_back(std::move(ins));
    add_gaussian_noise(scene.image, 0.04, noise);
    return scene;
}

Scene make_radar_scene(int S, Rng& geo, Rng& inten, Rng& noise) {
    Scene scene;
    const double bg = inten.uniform(0.70, 0.95);
    scene.image.assign(static_cast<std::size_t>(S) * S, bg);

    const int count = geo.uniform_int(1, 4);
    for (int i = 0; i < count; ++i) {
        int w = geo.uniform_int(3, 5);
        int h = geo.uniform_int(16, 28);
        if (geo.coin()) std::swap(w, h);
        Instance ins;
        if (!place(scene.instances, raster_rect_adapter, S, w, h, geo, ins)) continue;
        ins.intensity = inten.uniform(0.05, 0.30);
        for (std::size_t px = 0; px < ins.mask.size(); ++px) {
            if (ins.mask[px]) scene.image[px] = ins.intensity;
        }
        scene.instances.push_back(std::move(ins));
    }
    add_speckle_noise(scene.image, 0.4, noise);
    return scene;
}

Scene make_scene(Scenario sc, int S, Rng& geo, Rng& inten, Rng& noise) {
    switch (sc) {
        case Scenario::Base:
        case Scenario::Natural: return make_shape_scene(sc, S, geo, inten, noise);
        case Scenario::RemoteSensing: return make_remote_sensing_scene(S, geo, inten, noise);
        case Scenario::Medical: return make_medical_scene(S, geo, inten, noise);
        case Scenario::RadarShift: return make_radar_scene(S, geo, inten, noise);
    }
    throw ContractError("unknown scenario");
}

bool box_covers_instance_pixel(const BoxPrompt& b, const Instance& ins, int S) {
    for (int y = b.y0; y < b.y1; ++y) {
        for (int x = b.x0; x < b.x1; ++x) {
            if (ins.mask[static_cast<std::size_t>(y) * S + x]) return true;
        }
    }
    return false;
}

}  // namespace

std::string scenario_name(Scenario sc) {
    switch (sc) {
        case Scenario::Base: return "base";
        case Scenario::Natural: return "natural";
        case Scenario::RemoteSensing: return "remotesensing";
        case Scenario::Medical: return "medical";
        case Scenario::RadarShift: return "radarshift";
    }
    throw ContractError("unknown scenario");
}

Scenario parse_scenario(const std::string& name) {
    for (const Scenario sc : all_scenarios()) {
        if (scenario_name(sc) == name) return sc;
    }
    throw ConfigError("unknown scenario '" + name +
                      "' (expected base|natural|remotesensing|medical|radarshift)");
}

std::vector<Scenario> all_scenarios() {
    return {Scenario::Base, Scenario::Natural, Scenario::RemoteSensing, Scenario::Medical,
            Scenario::RadarShift};
}

BoxPrompt perturb_box(const BoxPrompt& tight, int img_size, int max_perturb, Rng& rng) {
    tight.validate(img_size);
    auto jitter = [&](int side, bool outward_is_negative) {
        const int mag = rng.uniform_int(0, max_perturb);
        const bool outward = rng.coin();
        const int dir = (outward == outward_is_negative) ? -1 : 1;
        return side + dir * mag;
    };
    BoxPrompt b;
    b.x0 = std::clamp(jitter(tight.x0, true), 0, img_size);
    b.x1 = std::clamp(jitter(tight.x1, false), 0, img_size);
    b.y0 = std::clamp(jitter(tight.y0, true), 0, img_size);
    b.y1 = std::clamp(jitter(tight.y1, false), 0, img_size);
    if (b.x0 >= b.x1) {  // degenerate after inward moves: re-expand by 1 px
        if (b.x0 >= img_size) b.x0 = img_size - 1;
        b.x1 = b.x0 + 1;
    }
    if (b.y0 >= b.y1) {
        if (b.y0 >= img_size) b.y0 = img_size - 1;
        b.y1 = b.y0 + 1;
    }
    b.validate(img_size);
    return b;
}

std::vector<SegSample> generate(Scenario sc, int n, std::uint64_t seed, const GenOptions& opt) {
    if (n < 1) throw ConfigError("generate: n must be >= 1");
    const int S = opt.img_size;
    const std::uint64_t salt = seed ^ scenario_salt(sc);

    std::vector<SegSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        Rng geo(salt, idx, kGeometry);
        Rng inten(salt, idx, kIntensity);
        Rng noise(salt, idx, kNoise);
        Scene scene = make_scene(sc, S, geo, inten, noise);
        if (scene.instances.empty()) {
            throw ContractError("generate: empty scene for " + scenario_name(sc));
        }

        Rng target_rng(salt, idx, kTarget);
        const int target =
            target_rng.uniform_int(0, static_cast<int>(scene.instances.size()) - 1);
        const Instance& ins = scene.instances[static_cast<std::size_t>(target)];
        BoxPrompt tight{ins.x0, ins.y0, ins.x1, ins.y1};

        Rng perturb_rng(salt, idx, kPerturb);
        BoxPrompt box = perturb_box(tight, S, opt.max_perturb, perturb_rng);
        if (!box_covers_instance_pixel(box, ins, S)) box = tight;

        std::vector<double> mask(static_cast<std::size_t>(S) * S, 0.0);
        for (const auto& instance : scene.instances) {
            for (std::size_t px = 0; px < mask.size(); ++px) {
                if (instance.mask[px]) mask[px] = 1.0;
            }
        }
        SegSample sample;
        sample.image = Tensor::from_data({1, S, S}, std::move(scene.image));
        sample.mask = Tensor::from_data({1, S, S}, std::move(mask));
        sample.box = box;
        out.push_back(std::move(sample));
    }
    return out;
}

void dump_dataset(const std::filesystem::path& dir, const std::vector<SegSample>& samples,
                  Scenario sc) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.txt");
    if (!index) throw ValidationError("cannot write dataset index in " + dir.string());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::string stem = std::to_string(i);
        save_tensor(dir / (stem + ".image.bin"), s.image);
        save_tensor(dir / (stem + ".mask.bin"), s.mask);
        index << i << '\t' << scenario_name(sc) << '\t' << s.box.x0 << ' ' << s.box.y0 << ' '
              << s.box.x1 << ' ' << s.box.y1 << '\n';
    }
}

}  // namespace peftlab
