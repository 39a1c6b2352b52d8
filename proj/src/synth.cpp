#include "slidekit/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "slidekit/errors.hpp"
#include "slidekit/random.hpp"
#include "slidekit/stain.hpp"

namespace slidekit {

namespace {

constexpr const char* kTissues[kSynthTissues] = {"breast", "colon", "lung", "prostate", "skin"};
constexpr const char* kDiagnoses[] = {"adenocarcinoma", "squamous_cell_carcinoma", "lymphoma", "benign", "sarcoma"};
constexpr int kHeSlides = kSynthLabs * kSynthTissues;

struct Signature {
  double stroma_h;
  double stroma_e;
  double nucleus_h;
  double nucleus_dab;
  double density;  // fraction of tissue area covered by nuclei
  double radius;
};

Signature signature(int d) {
  const double t = static_cast<double>(d);
  const double wobble = 0.5 + 0.5 * std::sin(1.7 * t + 0.3);
  return {0.05 + 0.12 * t, 0.72 - 0.12 * t + 0.05 * wobble, 0.55 + 0.12 * t, 0.15 + 0.18 * t,
          0.04 + 0.06 * wobble + 0.03 * t, 3.0 + 1.5 * t};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string slide_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%03d", i);
  return buf;
}

}  // namespace

std::string synth_diagnosis_name(int d) {
  if (d < 0) throw Error("negative diagnosis index");
  if (d < 5) return kDiagnoses[d];
  return "diagnosis_" + std::to_string(d);
}

Catalog synth_catalog(const SynthOptions& opts) {
  if (opts.slides < 1) throw Error("synth: need at least one slide");
  if (opts.diagnoses < 1) throw Error("synth: need at least one diagnosis");
  if (opts.width < 256 || opts.height < 256) throw Error("synth: slides must be at least 256x256");
  Catalog catalog;
  for (int i = 0; i < opts.slides; ++i) {
    SlideRecord r;
    r.slide_id = slide_name(i);
    r.case_id = "C" + r.slide_id.substr(1);
    int d = 0;
    if (i < kHeSlides) {
      const int lab = i / kSynthTissues, tissue = i % kSynthTissues;
      r.lab = "lab" + std::to_string(lab);
      r.tissue_type = kTissues[tissue];
      r.staining = "H&E";
      r.staining_category = StainCategory::HE;
      d = (tissue + lab) % opts.diagnoses;
    } else {
      const int pair = (i - kHeSlides) / 2;
      r.lab = "lab" + std::to_string(i % kSynthLabs);
      r.tissue_type = kTissues[i % kSynthTissues];
      const bool ihc = pair % 2 == 0;
      r.staining = ihc ? "IHC-Ki67" : "Masson trichrome";
      r.staining_category = ihc ? StainCategory::IHC : StainCategory::Other;
      d = pair % opts.diagnoses;
    }
    const int lab_index = std::stoi(r.lab.substr(3));
    r.scanner = lab_index % 2 == 0 ? "scanner_a" : "scanner_b";
    r.prep = lab_index == 5 ? Prep::FF : Prep::FFPE;
    r.diagnosis = synth_diagnosis_name(d);
    r.mpp = 0.5;
    r.image_path = "slides/" + r.slide_id + ".ppm";
    r.extra["width"] = opts.width;
    r.extra["height"] = opts.height;
    catalog.add(std::move(r));
  }
  return catalog;
}

int synth_diagnosis_index(const SlideRecord& r) {
  const std::string& name = r.diagnosis.value_or("");
  for (int d = 0; d < 5; ++d) {
    if (name == kDiagnoses[d]) return d;
  }
  if (name.rfind("diagnosis_", 0) == 0) return std::stoi(name.substr(10));
  throw Error("slide " + r.slide_id + " has no synthetic diagnosis");
}

RgbImage synth_slide_image(const SlideRecord& r, const SynthOptions& opts) {
  const int w = opts.width, h = opts.height;
  Rng rng(counter_hash(opts.seed, fnv1a64(r.slide_id)));
  const Signature sig = signature(synth_diagnosis_index(r));
  const int lab = std::stoi(r.lab.substr(3));
  int tissue = 0;
  while (tissue < kSynthTissues && r.tissue_type != kTissues[tissue]) ++tissue;
  const double lab_gain = 1.0 + 0.04 * (lab - 2.5) / 2.5;

  // Tissue ellipse with a wobbly outline.
  const double cx = w * (0.5 + 0.02 * (rng.uniform() - 0.5)), cy = h * (0.5 + 0.02 * (rng.uniform() - 0.5));
  const double rx = w * 0.47, ry = h * 0.46;
  const double phase = rng.uniform() * 2.0 * std::numbers::pi;

  // Nuclei as a disk mask.
  std::vector<std::uint8_t> nucleus(static_cast<std::size_t>(w) * h, 0);
  const double area = std::numbers::pi * rx * ry;
  const int count = static_cast<int>(sig.density * area / (std::numbers::pi * sig.radius * sig.radius));
  for (int n = 0; n < count; ++n) {
    const double a = rng.uniform() * 2.0 * std::numbers::pi, rr = std::sqrt(rng.uniform());
    const double nx = cx + rr * rx * std::cos(a), ny = cy + rr * ry * std::sin(a);
    const double rad = sig.radius * (0.8 + 0.4 * rng.uniform());
    const int x0 = std::max(0, static_cast<int>(nx - rad)), x1 = std::min(w - 1, static_cast<int>(nx + rad) + 1);
    const int y0 = std::max(0, static_cast<int>(ny - rad)), y1 = std::min(h - 1, static_cast<int>(ny + rad) + 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if ((x - nx) * (x - nx) + (y - ny) * (y - ny) <= rad * rad) nucleus[static_cast<std::size_t>(y) * w + x] = 1;
  }

  // Trichrome counterstain: green fibres instead of pink eosin.
  const StainMatrix stains = r.staining_category == StainCategory::Other
                                 ? StainMatrix::from_rows((Mat3<double>() << 0.65, 0.70, 0.29,  //
                                                           0.85, 0.15, 0.50,                     //
                                                           0.27, 0.57, 0.78)
                                                              .finished())
                                 : StainMatrix::hed_default();
  const DeconvolutionParams dp;
  const double fx = 0.02 + 0.01 * tissue, fy = 0.015 + 0.008 * tissue;
  const double p1 = rng.uniform() * 6.28, p2 = rng.uniform() * 6.28;
  const bool ihc = r.staining_category == StainCategory::IHC;
  const bool other = r.staining_category == StainCategory::Other;

  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      const double edge = 1.0 + 0.04 * std::sin(5.0 * std::atan2(dy, dx) + phase);
      if (dx * dx + dy * dy > edge * edge) {
        const auto v = static_cast<std::uint8_t>(250 + rng.index(6));
        img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = v;
        continue;
      }
      const double tex = 0.5 + 0.5 * std::sin(fx * x + p1) * std::sin(fy * y + p2);
      Vec3<double> c;
      if (nucleus[static_cast<std::size_t>(y) * w + x]) {
        c = {sig.nucleus_h, 0.3 * sig.stroma_e, ihc ? sig.nucleus_dab : 0.0};
      } else {
        c = {sig.stroma_h * (0.8 + 0.4 * tex), sig.stroma_e * (0.75 + 0.5 * tex), 0.0};
      }
      if (ihc) c[1] *= 0.2;
      if (other) c[0] *= 0.7;
      c *= lab_gain;
      for (int k = 0; k < 3; ++k) c[k] = std::max(0.0, c[k] + 0.015 * rng.normal());
      const Vec3<double> rgb = stain_synthesize(c, stains, dp);
      for (int k = 0; k < 3; ++k) {
        img.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[k]), 0L, 255L));
      }
    }
  }
  return img;
}

std::string synth_group_rules() {
  std::ostringstream out;
  out << "# 30 lab x tissue groups for H&E, one group for everything else\n";
  int g = 0;
  for (int lab = 0; lab < kSynthLabs; ++lab)
    for (int t = 0; t < kSynthTissues; ++t)
      out << "rule staining_category=HE lab=lab" << lab << " tissue_type=" << kTissues[t] << " -> " << g++ << "\n";
  out << "rule staining_category=IHC|OTHER -> " << g << "\n";
  out << "default -> " << g << "\n";
  return out.str();
}

std::string synth_merge_map_k100() {
  std::ostringstream out;
  out << "raw_clusters 100\n";
  const char* names[9] = {"tumor epithelium", "stroma",   "necrosis",      "lymphocytes", "mucin",
                          "fat",              "vessels", "normal glands", "pen marks and artifacts"};
  for (int m = 0; m < 9; ++m) out << "meta " << m << " " << (m == 8 ? "0.25" : "1.0") << " " << names[m] << "\n";
  for (int m = 0; m < 9; ++m) {
    const int lo = m * 11, hi = m == 8 ? 98 : lo + 10;
    out << "map " << lo << "-" << hi << " " << m << "\n";
  }
  out << "drop 99\n";
  return out.str();
}

std::string synth_merge_map_k10() {
  return "raw_clusters 10\n"
         "meta 0 1.0 cellular\n"
         "meta 1 1.0 stromal\n"
         "meta 2 0.5 sparse\n"
         "map 0-3 0\n"
         "map 4-6 1\n"
         "map 7-9 2\n";
}

std::string synth_weights() {
  return "mode product\n"
         "group_default 1.0\n"
         "group 30 2.0\n"
         "meta_default 1.0\n"
         "meta 2 0.5\n";
}

Catalog write_synth_corpus(const std::filesystem::path& dir, const SynthOptions& opts) {
  Catalog catalog = synth_catalog(opts);
  std::filesystem::create_directories(dir / "slides");
  for (const auto& r : catalog) write_ppm((dir / r.image_path).string(), synth_slide_image(r, opts));
  save_manifest(catalog, dir / "manifest.jsonl");
  write_text(dir / "groups.conf", synth_group_rules());
  write_text(dir / "merge_k100.map", synth_merge_map_k100());
  write_text(dir / "merge_k10.map", synth_merge_map_k10());
  write_text(dir / "weights.conf", synth_weights());
  return load_manifest(dir / "manifest.jsonl");
}

}  // namespace slidekit
