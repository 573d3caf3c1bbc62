#include "pnpt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "pnpt/image.hpp"
#include "pnpt/rng.hpp"

namespace fs = std::filesystem;

namespace pnpt {

namespace {

constexpr double kPi = 3.14159265358979323846;

int mod2(double cell) {
  const long long n = static_cast<long long>(std::floor(cell));
  return static_cast<int>(((n % 2) + 2) % 2);
}

struct Jitter {
  double phase_u = 0.0, phase_v = 0.0, gain = 1.0;
};

// Base texture value (before gain/noise) of one pixel, in [0,1] per channel.
void texture_at(const ClassRecipe& r, double x, double y, const Jitter& j, double out[3]) {
  const double th = r.angle_deg * kPi / 180.0;
  const double u = std::cos(th) * x + std::sin(th) * y + j.phase_u;
  const double v = -std::sin(th) * x + std::cos(th) * y + j.phase_v;
  const double p = static_cast<double>(r.period);
  double on;
  if (r.texture == "checkerboard") {
    on = (mod2(u / (p / 2.0)) + mod2(v / (p / 2.0))) % 2 ? 1.0 : 0.0;
  } else if (r.texture == "stripes") {
    on = mod2(u / (p / 2.0)) ? 1.0 : 0.0;
  } else if (r.texture == "dots") {
    const double cu = u - p * std::floor(u / p) - p / 2.0;
    const double cv = v - p * std::floor(v / p) - p / 2.0;
    const double rad = p / 3.0;
    on = (cu * cu + cv * cv < rad * rad) ? 1.0 : 0.0;
  } else if (r.texture == "gradient") {
    on = 0.5 + 0.5 * std::sin(2.0 * kPi * u / p);
  } else {
    throw std::invalid_argument("unknown texture recipe '" + r.texture + "'");
  }
  for (int c = 0; c < 3; ++c) out[c] = r.bg[static_cast<std::size_t>(c)] + (r.fg[static_cast<std::size_t>(c)] - r.bg[static_cast<std::size_t>(c)]) * on;
}

// Renders the normal image for one per-image stream. Draw order is the
// determinism contract: phase_u, phase_v, gain, then per-pixel noise.
Tensor render_base(const ClassRecipe& r, int size, Rng& rng) {
  Jitter j;
  j.phase_u = rng.uniform(0.0, static_cast<double>(r.period));
  j.phase_v = rng.uniform(0.0, static_cast<double>(r.period));
  j.gain = rng.uniform(0.95, 1.05);
  Tensor img({3, size, size});
  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v[3];
      texture_at(r, x, y, j, v);
      const std::int64_t p = static_cast<std::int64_t>(y) * size + x;
      for (int c = 0; c < 3; ++c) {
        img[c * plane + p] = std::clamp(v[c] * j.gain + rng.normal(0.0, 0.01), 0.0, 1.0);
      }
    }
  }
  return img;
}

Tensor quantize_u8(const Tensor& img) {
  Tensor out = img;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::lround(std::clamp(out[i], 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

struct DefectRegion {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // bounding box, half-open
  bool ellipse = false;
  bool inside(int x, int y) const {
    if (x < x0 || x >= x1 || y < y0 || y >= y1) return false;
    if (!ellipse) return true;
    const double cx = (x0 + x1 - 1) / 2.0, cy = (y0 + y1 - 1) / 2.0;
    const double rx = (x1 - x0) / 2.0, ry = (y1 - y0) / 2.0;
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

DefectRegion draw_region(Rng& rng, int size, int lo, int hi, bool ellipse) {
  DefectRegion reg;
  const int w = rng.uniform_int(lo, hi), h = rng.uniform_int(lo, hi);
  const int margin = 8;
  reg.x0 = rng.uniform_int(margin, size - margin - w);
  reg.y0 = rng.uniform_int(margin, size - margin - h);
  reg.x1 = reg.x0 + w;
  reg.y1 = reg.y0 + h;
  reg.ellipse = ellipse;
  return reg;
}

// Applies the defect in place and returns the analytic mask region.
DefectRegion apply_defect(Tensor& img, const SynthSpec& spec, int class_index,
                          const std::string& defect, Rng& rng) {
  const int size = spec.image_size;
  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  const int lo = size / 5, hi = size / 3;
  if (defect == "swap") {
    DefectRegion reg = draw_region(rng, size, lo, hi, false);
    const int n = static_cast<int>(spec.classes.size());
    const int other = (class_index + 1 + (n > 2 ? rng.uniform_int(0, n - 2) : 0)) % n;
    const ClassRecipe& fr = spec.classes[static_cast<std::size_t>(other)];
    Jitter fj;
    fj.phase_u = rng.uniform(0.0, static_cast<double>(fr.period));
    fj.phase_v = rng.uniform(0.0, static_cast<double>(fr.period));
    for (int y = reg.y0; y < reg.y1; ++y) {
      for (int x = reg.x0; x < reg.x1; ++x) {
        double v[3];
        texture_at(fr, x, y, fj, v);
        for (int c = 0; c < 3; ++c) img[c * plane + static_cast<std::int64_t>(y) * size + x] = std::clamp(v[c], 0.0, 1.0);
      }
    }
    return reg;
  }
  if (defect == "blotch") {
    DefectRegion reg = draw_region(rng, size, lo, hi, true);
    const double shift = rng.uniform() < 0.5 ? 0.3 : -0.3;
    for (int y = reg.y0; y < reg.y1; ++y) {
      for (int x = reg.x0; x < reg.x1; ++x) {
        if (!reg.inside(x, y)) continue;
        for (int c = 0; c < 3; ++c) {
          double& v = img[c * plane + static_cast<std::int64_t>(y) * size + x];
          // Shift away from the nearer clip bound so the change survives clamping.
          v = std::clamp(v + (v + shift < 0.0 || v + shift > 1.0 ? -shift : shift), 0.0, 1.0);
        }
      }
    }
    return reg;
  }
  if (defect == "cutout") {
    // Missing element: the motif vanishes and only the plain background
    // remains (no local texture damage).
    DefectRegion reg = draw_region(rng, size, lo, hi, false);
    const ClassRecipe& r = spec.classes[static_cast<std::size_t>(class_index)];
    for (int y = reg.y0; y < reg.y1; ++y) {
      for (int x = reg.x0; x < reg.x1; ++x) {
        for (int c = 0; c < 3; ++c) img[c * plane + static_cast<std::int64_t>(y) * size + x] = r.bg[static_cast<std::size_t>(c)];
      }
    }
    return reg;
  }
  throw std::invalid_argument("unknown defect recipe '" + defect + "'");
}

// Quantized anomalous images must differ from the quantized twin at every
// masked pixel; nudge any coinciding pixel by one gray level.
void force_mask_difference(Tensor& img, const Tensor& twin, const Tensor& mask, int size) {
  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  for (std::int64_t p = 0; p < plane; ++p) {
    if (mask[p] == 0.0) continue;
    bool differs = false;
    for (int c = 0; c < 3 && !differs; ++c) differs = img[c * plane + p] != twin[c * plane + p];
    if (!differs) {
      double& v = img[p];  // channel 0
      v = v >= 1.0 ? v - 1.0 / 255.0 : v + 1.0 / 255.0;
    }
  }
}

std::string zero_pad(int n) {
  std::string s = std::to_string(n);
  return std::string(s.size() >= 3 ? 0 : 3 - s.size(), '0') + s;
}

}  // namespace

std::vector<ClassRecipe> SynthSpec::default_classes() {
  return {
      ClassRecipe{"checker", "checkerboard", 16, 0.0, {0.86, 0.34, 0.28}, {0.16, 0.12, 0.10}},
      ClassRecipe{"stripes", "stripes", 12, 30.0, {0.30, 0.78, 0.38}, {0.90, 0.88, 0.80}},
      ClassRecipe{"dots", "dots", 14, 0.0, {0.28, 0.42, 0.88}, {0.52, 0.50, 0.48}},
  };
}

SynthSpec SynthSpec::defaults() {
  SynthSpec spec;
  spec.classes = default_classes();
  return spec;
}

void SynthSpec::validate() const {
  if (image_size < 64) throw std::invalid_argument("synth: image_size must be >= 64");
  if (n_train < 1 || n_test_normal < 0 || n_test_anomalous < 0) throw std::invalid_argument("synth: image counts out of range");
  if (classes.empty()) throw std::invalid_argument("synth: no classes");
  for (const auto& c : classes) {
    if (c.period < 4) throw std::invalid_argument("synth: class " + c.name + " period must be >= 4");
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      if (classes[i].name == classes[j].name) throw std::invalid_argument("synth: duplicate class name " + classes[i].name);
    }
  }
}

const std::vector<std::string>& defect_types() {
  static const std::vector<std::string> types = {"swap", "blotch", "cutout"};
  return types;
}

Tensor render_defect_free(const SynthSpec& spec, int class_index, const std::string& rel_path) {
  Rng rng(derive_seed(spec.seed, rel_path));
  return quantize_u8(render_base(spec.classes[static_cast<std::size_t>(class_index)], spec.image_size, rng));
}

nlohmann::json generate_dataset(const SynthSpec& spec, const std::string& out_root, bool force) {
  spec.validate();
  const fs::path root(out_root);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw std::runtime_error("output directory " + out_root + " is not empty (use --force to overwrite)");
    fs::remove_all(root);
  }
  fs::create_directories(root);

  nlohmann::json manifest;
  manifest["seed"] = spec.seed;
  manifest["image_size"] = spec.image_size;
  manifest["classes"] = nlohmann::json::array();
  for (const auto& c : spec.classes) {
    manifest["classes"].push_back({{"name", c.name}, {"texture", c.texture}, {"period", c.period}, {"angle_deg", c.angle_deg}});
  }
  manifest["images"] = nlohmann::json::array();

  for (int ci = 0; ci < static_cast<int>(spec.classes.size()); ++ci) {
    const ClassRecipe& recipe = spec.classes[static_cast<std::size_t>(ci)];
    auto emit_normal = [&](const std::string& split_dir, int index) {
      const std::string rel = recipe.name + "/" + split_dir + "/" + zero_pad(index) + ".png";
      Rng rng(derive_seed(spec.seed, rel));
      Tensor img = quantize_u8(render_base(recipe, spec.image_size, rng));
      fs::create_directories(root / fs::path(rel).parent_path());
      save_image_rgb8(img, (root / rel).string());
      manifest["images"].push_back({{"path", rel}, {"class", recipe.name}, {"split", split_dir.substr(0, split_dir.find('/'))}, {"defect", "good"}, {"mask", nullptr}});
    };
    for (int i = 0; i < spec.n_train; ++i) emit_normal("train/good", i);
    for (int i = 0; i < spec.n_test_normal; ++i) emit_normal("test/good", i);

    std::vector<int> per_type_count(defect_types().size(), 0);
    for (int j = 0; j < spec.n_test_anomalous; ++j) {
      const std::string& defect = defect_types()[static_cast<std::size_t>(j) % defect_types().size()];
      const int index = per_type_count[static_cast<std::size_t>(j) % defect_types().size()]++;
      const std::string rel = recipe.name + "/test/" + defect + "/" + zero_pad(index) + ".png";
      const std::string mask_rel = recipe.name + "/ground_truth/" + defect + "/" + zero_pad(index) + "_mask.png";

      Rng rng(derive_seed(spec.seed, rel));
      Tensor base = render_base(recipe, spec.image_size, rng);
      Tensor twin = quantize_u8(base);
      Tensor img = base;
      Rng defect_rng(derive_seed(spec.seed, rel + "#defect"));
      DefectRegion reg = apply_defect(img, spec, ci, defect, defect_rng);
      img = quantize_u8(img);

      Tensor mask({spec.image_size, spec.image_size});
      for (int y = 0; y < spec.image_size; ++y) {
        for (int x = 0; x < spec.image_size; ++x) {
          if (reg.inside(x, y)) mask[static_cast<std::int64_t>(y) * spec.image_size + x] = 1.0;
        }
      }
      force_mask_difference(img, twin, mask, spec.image_size);

      fs::create_directories(root / fs::path(rel).parent_path());
      fs::create_directories(root / fs::path(mask_rel).parent_path());
      save_image_rgb8(img, (root / rel).string());
      save_image_gray8(mask, (root / mask_rel).string());
      manifest["images"].push_back({{"path", rel}, {"class", recipe.name}, {"split", "test"}, {"defect", defect}, {"mask", mask_rel}});
    }
  }

  std::ofstream out(root / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest.json under " + out_root);
  out << manifest.dump(2) << '\n';
  return manifest;
}

}  // namespace pnpt
