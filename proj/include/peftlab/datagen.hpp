#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "peftlab/box_prompt.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/tensor.hpp"

namespace peftlab {

// Synthetic stand-ins for a pretraining distribution and fine-tuning
// shifts of graded severity:
//   Base          - mixed ellipses/rectangles, 1-3 instances, additive
//                   noise sigma 0.05 (the pretraining distribution)
//   Natural       - same families, shifted size/aspect ranges
//   RemoteSensing - 3-8 small bright rectangles (multi-instance)
//   Medical       - one soft-edged blob (single-instance)
//   RadarShift    - dark thin bars on a bright field with multiplicative
//                   speckle (sigma 0.4); the severe shift
enum class Scenario { Base, Natural, RemoteSensing, Medical, RadarShift };

std::string scenario_name(Scenario sc);
Scenario parse_scenario(const std::string& name);
std::vector<Scenario> all_scenarios();

struct SegSample {
    Tensor image;  // (1, S, S), values in [0, 1]
    Tensor mask;   // (1, S, S), binary union of all rendered instances
    BoxPrompt box;  // perturbed tight box of one target instance
};

struct GenOptions {
    int img_size = 64;
    int max_perturb = 2;  // per-side box jitter in pixels
};

// Pure in (scenario, n, seed): repeated calls are bitwise identical and
// samples may be generated in any order or in parallel.
std::vector<SegSample> generate(Scenario sc, int n, std::uint64_t seed,
                                const GenOptions& opt = {});

// Each side moves outward or inward by an independent uniform integer in
// [0, max_perturb], clamped to the image; a box that degenerates is
// re-expanded by one pixel.
BoxPrompt perturb_box(const BoxPrompt& tight, int img_size, int max_perturb, Rng& rng);

// Directory of tensor files plus a plain-text index
// (sample-id, scenario, box coords).
void dump_dataset(const std::filesystem::path& dir, const std::vector<SegSample>& samples,
                  Scenario sc);

}  // namespace peftlab
