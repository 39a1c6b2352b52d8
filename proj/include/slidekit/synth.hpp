#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "slidekit/catalog.hpp"
#include "slidekit/image.hpp"

namespace slidekit {

// Procedural corpus: tissue ellipses on a white background rendered through
// the stain forward model. Diagnosis sets stain concentrations and nuclear
// density/size; lab adds a small stain shift; tissue type sets the stromal
// texture frequency. The first min(30, slides) slides are H&E and cover
// 6 labs x 5 tissues; the rest alternate IHC / OTHER in same-diagnosis pairs.
struct SynthOptions {
  int slides = 40;
  int diagnoses = 5;
  int width = 1024;
  int height = 768;
  std::uint64_t seed = 0;
};

inline constexpr int kSynthLabs = 6;
inline constexpr int kSynthTissues = 5;

std::string synth_diagnosis_name(int d);

// Metadata only (image paths point at slides/<id>.ppm).
Catalog synth_catalog(const SynthOptions& opts);
int synth_diagnosis_index(const SlideRecord& r);
RgbImage synth_slide_image(const SlideRecord& r, const SynthOptions& opts);

// 30 lab x tissue rules for H&E plus one for non-H&E slides.
std::string synth_group_rules();
std::string synth_merge_map_k100();  // 100 -> 9
std::string synth_merge_map_k10();   // 10 -> 3
std::string synth_weights();

// Writes slides/, manifest.jsonl, groups.conf, merge_k100.map,
// merge_k10.map and weights.conf into dir. Returns the catalog.
Catalog write_synth_corpus(const std::filesystem::path& dir, const SynthOptions& opts);

}  // namespace slidekit
