#include "advtag/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "advtag/errors.hpp"
#include "advtag/image_io.hpp"
#include "advtag/rng.hpp"

namespace advtag {
namespace {

constexpr std::array<char, 4> kMagic{'A', 'T', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

const std::vector<std::string> kShapeNames{"disk",      "square",       "triangle",  "ring",         "plus",
                                           "hbars",     "vbars",        "dbars",     "checkerboard", "dotgrid"};

float quantise(double v) { return static_cast<float>(to_u8(static_cast<float>(v))) / 255.0f; }

struct Rgb {
  double r, g, b;
  double luma() const { return 0.299 * r + 0.587 * g + 0.114 * b; }
};

Rgb random_colour(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

// Membership of pixel (x, y) in the foreground of a shape class, given
// per-image geometry. Coordinates are pixel centres.
bool in_shape(int cls, double x, double y, double cx, double cy, double r, double period, double phase, double angle) {
  const double dx = x - cx, dy = y - cy;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
  const double dist = std::hypot(dx, dy);
  auto wrap = [](double t, double p) { return t - p * std::floor(t / p); };
  switch (cls) {
    case 0: return dist <= r;
    case 1: return std::abs(u) <= 0.8 * r && std::abs(v) <= 0.8 * r;
    case 2: {
      // Upright triangle in the rotated frame, apex at v = -r.
      const double t = (v + r) / (1.8 * r);
      return t >= 0.0 && t <= 1.0 && std::abs(u) <= t * r;
    }
    case 3: return dist <= r && dist >= 0.55 * r;
    case 4: {
      const double w = 0.28 * r;
      return (std::abs(u) <= w && std::abs(v) <= r) || (std::abs(v) <= w && std::abs(u) <= r);
    }
    case 5: return wrap(y + phase, period) < period / 2;
    case 6: return wrap(x + phase, period) < period / 2;
    case 7: return wrap((x + y) / std::numbers::sqrt2 + phase, period) < period / 2;
    case 8: {
      const int a = static_cast<int>(std::floor((x + phase) / period));
      const int b = static_cast<int>(std::floor((y + phase) / period));
      return ((a + b) & 1) == 0;
    }
    case 9: {
      const double gx = wrap(x + phase, period) - period / 2;
      const double gy = wrap(y + phase, period) - period / 2;
      return gx * gx + gy * gy <= (0.22 * period) * (0.22 * period) * 4;
    }
    default: return false;
  }
}

const std::vector<std::string> kTextureNames{"sky",     "grass", "water", "sand",   "brick",
                                             "foliage", "stone", "snow",  "sunset", "wood"};

Rgb hsv(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h);
  const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

// Smoothstep-interpolated value noise on a 64x64 periodic lattice.
class ValueNoise {
 public:
  explicit ValueNoise(Rng& rng) {
    for (double& v : lattice_) v = rng.uniform();
  }

  double operator()(double x, double y) const {
    const int i = static_cast<int>(std::floor(x)), j = static_cast<int>(std::floor(y));
    auto smooth = [](double t) { return t * t * (3 - 2 * t); };
    const double fx = smooth(x - i), fy = smooth(y - j);
    return (at(i, j) * (1 - fx) + at(i + 1, j) * fx) * (1 - fy) + (at(i, j + 1) * (1 - fx) + at(i + 1, j + 1) * fx) * fy;
  }

  double fbm(double x, double y, int octaves) const {
    double sum = 0, weight = 0.5, total = 0;
    for (int o = 0; o < octaves; ++o) {
      sum += weight * (*this)(x, y);
      total += weight;
      x *= 2;
      y *= 2;
      weight *= 0.5;
    }
    return sum / total;
  }

 private:
  double at(int i, int j) const { return lattice_[static_cast<std::size_t>(((i & 63) * 64) + (j & 63))]; }
  std::array<double, 64 * 64> lattice_{};
};

// Two-colour palette for a texture class; `hj` is the per-image hue jitter.
std::pair<Rgb, Rgb> texture_palette(int cls, double hj, Rng& r) {
  switch (cls) {
    case 0: return {hsv(210 + hj, r.uniform(.35, .7), r.uniform(.7, .95)), hsv(210, r.uniform(0, .1), r.uniform(.9, 1))};
    case 1: return {hsv(100 + hj, r.uniform(.5, .8), r.uniform(.3, .5)), hsv(90 + hj, r.uniform(.4, .7), r.uniform(.6, .85))};
    case 2: return {hsv(200 + hj, r.uniform(.5, .8), r.uniform(.35, .6)), hsv(190 + hj, r.uniform(.2, .5), r.uniform(.7, .9))};
    case 3: return {hsv(40 + hj, r.uniform(.25, .45), r.uniform(.7, .85)), hsv(35 + hj, r.uniform(.3, .5), r.uniform(.55, .7))};
    case 4: return {hsv(10 + hj, r.uniform(.5, .75), r.uniform(.45, .7)), hsv(30, r.uniform(0, .15), r.uniform(.65, .85))};
    case 5: return {hsv(110 + hj, r.uniform(.5, .9), r.uniform(.15, .35)), hsv(80 + hj, r.uniform(.5, .8), r.uniform(.45, .65))};
    case 6: return {hsv(30 + hj * 4, r.uniform(0, .12), r.uniform(.35, .5)), hsv(30 + hj * 4, r.uniform(0, .12), r.uniform(.6, .75))};
    case 7: return {hsv(205 + hj, r.uniform(.05, .2), r.uniform(.75, .88)), hsv(0, 0, r.uniform(.92, 1))};
    case 8: return {hsv(25 + hj, r.uniform(.7, .95), r.uniform(.85, 1)), hsv(290 + hj, r.uniform(.4, .7), r.uniform(.3, .5))};
    default: return {hsv(28 + hj, r.uniform(.55, .8), r.uniform(.3, .45)), hsv(32 + hj, r.uniform(.45, .7), r.uniform(.6, .75))};
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::string Dataset::class_name(int c) const {
  if (c >= 0 && static_cast<std::size_t>(c) < class_names.size()) return class_names[static_cast<std::size_t>(c)];
  return "class" + std::to_string(c);
}

void Dataset::validate() const {
  if (num_classes < 2) throw ContractViolation("dataset: need at least 2 classes");
  if (!class_names.empty() && class_names.size() != num_classes) {
    throw ContractViolation("dataset: " + std::to_string(class_names.size()) + " class names for " +
                            std::to_string(num_classes) + " classes");
  }
  const Shape want{3, image_size, image_size};
  for (std::size_t i = 0; i < items.size(); ++i) {
    const LabeledImage& item = items[i];
    if (item.pixels.shape() != want) {
      throw ContractViolation("dataset: image " + std::to_string(i) + " has shape " + to_string(item.pixels.shape()) +
                              ", expected " + to_string(want));
    }
    if (item.label < 0 || static_cast<std::size_t>(item.label) >= num_classes) {
      throw ContractViolation("dataset: image " + std::to_string(i) + " label " + std::to_string(item.label) +
                              " out of range");
    }
    for (float v : item.pixels.data()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw ContractViolation("dataset: image " + std::to_string(i) + " pixel outside [0, 1]");
    }
  }
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must be in [0, 1)");
  Dataset train = data, held = data;
  const auto n_held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data.size())));
  train.items.assign(data.items.begin(), data.items.end() - static_cast<std::ptrdiff_t>(n_held));
  held.items.assign(data.items.end() - static_cast<std::ptrdiff_t>(n_held), data.items.end());
  return {std::move(train), std::move(held)};
}

Dataset resize_dataset(const Dataset& data, std::size_t size) {
  Dataset out = data;
  out.image_size = size;
  for (LabeledImage& item : out.items) {
    item.pixels = resize_bilinear(item.pixels, size, size);
    for (float& v : item.pixels.data()) v = quantise(v);
  }
  return out;
}

Dataset make_shapes_dataset(std::size_t count, std::uint64_t seed, std::size_t size) {
  if (size < 16) throw ContractViolation("make_shapes_dataset: size must be >= 16");
  Dataset data;
  data.image_size = size;
  data.num_classes = kShapeNames.size();
  data.class_names = kShapeNames;
  const double scale = static_cast<double>(size) / 32.0;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    const int cls = static_cast<int>(rng.below(data.num_classes));
    const Rgb bg = random_colour(rng);
    Rgb fg = random_colour(rng);
    // Keep foreground/background separable in luminance.
    for (int tries = 0; tries < 64 && std::abs(fg.luma() - bg.luma()) < 0.25; ++tries) fg = random_colour(rng);
    if (std::abs(fg.luma() - bg.luma()) < 0.25) fg = bg.luma() > 0.5 ? Rgb{0.05, 0.05, 0.05} : Rgb{0.95, 0.95, 0.95};
    const double r = rng.uniform(7.0, 12.0) * scale;
    const double cx = rng.uniform(r + 1.0, static_cast<double>(size) - r - 1.0);
    const double cy = rng.uniform(r + 1.0, static_cast<double>(size) - r - 1.0);
    const double period = rng.uniform(5.0, 9.0) * scale;
    const double phase = rng.uniform(0.0, period);
    const double angle = rng.uniform(-0.35, 0.35);
    const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);

    LabeledImage item{Tensor({3, size, size}), cls};
    const double inv = 1.0 / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        const bool fore = in_shape(cls, px, py, cx, cy, r, period, phase, angle);
        const double shade = gx * (px * inv - 0.5) + gy * (py * inv - 0.5);
        const Rgb& c = fore ? fg : bg;
        const std::array<double, 3> rgb{c.r, c.g, c.b};
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double noise = rng.uniform(-0.06, 0.06);
          item.pixels[(ch * size + y) * size + x] = quantise(std::clamp(rgb[ch] + shade + noise, 0.0, 1.0));
        }
      }
    data.items.push_back(std::move(item));
  }
  return data;
}

Dataset make_textures_dataset(std::size_t count, std::uint64_t seed, std::size_t size) {
  if (size < 16) throw ContractViolation("make_textures_dataset: size must be >= 16");
  constexpr std::size_t S = 32;
  Dataset data;
  data.image_size = S;
  data.num_classes = kTextureNames.size();
  data.class_names = kTextureNames;
  for (std::size_t n = 0; n < count; ++n) {
    Rng r(derive_seed(seed, n));
    const int cls = static_cast<int>(r.below(data.num_classes));
    const ValueNoise noise(r);
    const double ox = r.uniform(0, 32), oy = r.uniform(0, 32), ang = r.uniform(-.3, .3);
    const double ca = std::cos(ang), sa = std::sin(ang);
    const double bright = r.uniform(-.12, .12), hj = r.uniform(-15, 15);
    const auto [a, b] = texture_palette(cls, hj, r);
    const double brick_h = r.uniform(4, 6), brick_w = r.uniform(8, 12), ring = r.uniform(1.2, 2.2);
    const double sunx = r.uniform(6, 26), suny = r.uniform(8, 20);

    LabeledImage item{Tensor({3, S, S}), cls};
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double px = x + .5, py = y + .5, u = ca * px + sa * py, v = -sa * px + ca * py;
        double t = 0;
        switch (cls) {
          case 0: t = std::clamp((noise.fbm(px / 10 + ox, py / 10 + oy, 4) - .35) * 2.2, 0., 1.); break;
          case 1: t = noise.fbm(u / 1.2 + ox, v / 7 + oy, 3); break;
          case 2: {
            const double ripple = r.uniform(.9, 1.0);
            t = .5 + .5 * std::sin(v * ripple * 1.4 + 6 * noise.fbm(u / 8 + ox, v / 4 + oy, 2));
            break;
          }
          case 3: t = .6 * noise.fbm(px / 1.1 + ox, py / 1.1 + oy, 2) + .4 * noise.fbm(px / 12 + ox, py / 12 + oy, 2); break;
          case 4: {
            const double row = std::floor((v + oy) / brick_h);
            const double off = std::fmod(row, 2) * brick_w / 2;
            const double bu = std::fmod(u + ox + off + 100 * brick_w, brick_w);
            const double bv = std::fmod(v + oy + 100 * brick_h, brick_h);
            t = (bu < 1 || bv < 1) ? 1 : .15 * noise(px / 2 + ox, py / 2 + oy);
            break;
          }
          case 5:
            t = noise.fbm(px / 3.5 + ox, py / 3.5 + oy, 3) > .5 ? 1 : 0;
            t = .8 * t + .2 * noise(px + ox, py + oy);
            break;
          case 6: t = noise.fbm(px / 5 + ox, py / 5 + oy, 4); break;
          case 7: t = noise.fbm(px / 14 + ox, py / 14 + oy, 3) * 1.2; break;
          case 8:
            t = std::clamp(py / 32 + .3 * (noise.fbm(px / 10 + ox, py / 6 + oy, 2) - .5), 0., 1.);
            if (std::hypot(px - sunx, py - suny) < 4) t = -1;  // sun disc
            break;
          default: t = .5 + .5 * std::sin((v + 3 * noise.fbm(u / 12 + ox, v / 3 + oy, 2)) * ring * 2); break;
        }
        const Rgb c = t < 0 ? Rgb{1, .95, .7} : mix(a, b, std::clamp(t, 0., 1.));
        const std::array<double, 3> rgb{c.r, c.g, c.b};
        for (std::size_t ch = 0; ch < 3; ++ch)
          item.pixels[(ch * S + y) * S + x] = quantise(std::clamp(rgb[ch] + bright + r.uniform(-.04, .04), 0., 1.));
      }
    data.items.push_back(std::move(item));
  }
  return size == S ? data : resize_dataset(data, size);
}

Dataset make_toy_dataset(std::size_t count, std::uint64_t seed, std::size_t size) {
  Dataset data;
  data.image_size = size;
  data.num_classes = 2;
  data.class_names = {"dark", "bright"};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    const int cls = static_cast<int>(i % 2);
    const double base = cls == 0 ? rng.uniform(0.05, 0.35) : rng.uniform(0.65, 0.95);
    std::array<double, 3> tint{rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)};
    LabeledImage item{Tensor({3, size, size}), cls};
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < size * size; ++p) {
        item.pixels[ch * size * size + p] = quantise(std::clamp(base + tint[ch] + rng.uniform(-0.03, 0.03), 0.0, 1.0));
      }
    data.items.push_back(std::move(item));
  }
  return data;
}

void save_packed(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  const std::size_t s = data.image_size;
  std::string out(kMagic.begin(), kMagic.end());
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(s));
  put_u32(out, static_cast<std::uint32_t>(data.num_classes));
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  for (const LabeledImage& item : data.items) {
    put_u32(out, static_cast<std::uint32_t>(item.label));
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x)
        for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_u8(item.pixels[(c * s + y) * s + x])));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
  if (!data.class_names.empty()) {
    write_labels(data.class_names, std::filesystem::path(path).replace_extension(".labels"));
  }
}

Dataset load_packed(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  std::size_t pos = 0;
  auto u32 = [&]() {
    if (bytes.size() - pos < 4) throw FormatError("dataset file truncated: " + path.string());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  if (bytes.size() < 4 || bytes.compare(0, 4, std::string(kMagic.begin(), kMagic.end())) != 0) {
    throw VersionError("not a packed dataset (bad magic): " + path.string());
  }
  pos = 4;
  const std::uint32_t version = u32();
  if (version != kVersion) throw VersionError("unsupported dataset version " + std::to_string(version) + ": " + path.string());
  Dataset data;
  data.image_size = u32();
  data.num_classes = u32();
  const std::size_t count = u32();
  const std::size_t s = data.image_size;
  if (s == 0 || s > 4096 || data.num_classes < 2) throw FormatError("implausible dataset header: " + path.string());
  const std::size_t record = 4 + s * s * 3;
  if ((bytes.size() - pos) != count * record) {
    throw FormatError("dataset file size does not match header (" + std::to_string(count) + " records): " + path.string());
  }
  data.items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t label = u32();
    if (label >= data.num_classes) throw FormatError("label out of range in " + path.string());
    LabeledImage item{Tensor({3, s, s}), static_cast<int>(label)};
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          item.pixels[(c * s + y) * s + x] = static_cast<unsigned char>(bytes[pos++]) / 255.0f;
    data.items.push_back(std::move(item));
  }
  const auto labels = std::filesystem::path(path).replace_extension(".labels");
  if (std::filesystem::exists(labels)) {
    data.class_names = read_labels(labels);
    if (data.class_names.size() != data.num_classes) data.class_names.clear();
  }
  return data;
}

void save_png_dir(const Dataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "path,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.png", i);
    write_png(dir / name, data.items[i].pixels);
    manifest << name << ',' << data.items[i].label << '\n';
  }
  if (!data.class_names.empty()) write_labels(data.class_names, dir / "labels.txt");
}

Dataset load_png_dir(const std::filesystem::path& dir) {
  std::istringstream manifest(read_text(dir / "manifest.csv"));
  std::string line;
  if (!std::getline(manifest, line) || line.rfind("path,label", 0) != 0) {
    throw FormatError("manifest.csv must start with header 'path,label': " + dir.string());
  }
  Dataset data;
  int max_label = -1;
  std::size_t row = 1;
  while (std::getline(manifest, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw FormatError("manifest.csv row " + std::to_string(row) + " malformed");
    int label = 0;
    try {
      label = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw FormatError("manifest.csv row " + std::to_string(row) + ": bad label");
    }
    if (label < 0) throw FormatError("manifest.csv row " + std::to_string(row) + ": negative label");
    Tensor px = read_png(dir / line.substr(0, comma));
    if (px.dim(1) != px.dim(2)) throw FormatError("non-square image in row " + std::to_string(row));
    if (data.items.empty()) data.image_size = px.dim(1);
    if (px.dim(1) != data.image_size) throw FormatError("image size mismatch in row " + std::to_string(row));
    max_label = std::max(max_label, label);
    data.items.push_back({std::move(px), label});
  }
  if (std::filesystem::exists(dir / "labels.txt")) data.class_names = read_labels(dir / "labels.txt");
  data.num_classes = std::max<std::size_t>(data.class_names.size(), static_cast<std::size_t>(max_label + 1));
  if (!data.class_names.empty() && data.class_names.size() != data.num_classes) {
    throw FormatError("labels.txt lists fewer classes than the manifest uses: " + dir.string());
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("dataset not found: " + path.string());
  return std::filesystem::is_directory(path) ? load_png_dir(path) : load_packed(path);
}

std::vector<std::string> read_labels(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

void write_labels(const std::vector<std::string>& names, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& n : names) out << n << '\n';
}

}  // namespace advtag
