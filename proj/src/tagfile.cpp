#include "advtag/tagfile.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "advtag/config_json.hpp"
#include "advtag/errors.hpp"
#include "advtag/image_io.hpp"
#include "advtag/rng.hpp"

namespace advtag {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "advtag-tag";

double three_decimals(float v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", static_cast<double>(v));
  return std::strtod(buf, nullptr);
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

json prediction_json(const TagPrediction& p) {
  return {{"label", p.label}, {"name", p.name}, {"probability", p.probability}};
}

TagPrediction prediction_from(const json& j) {
  return {j.at("label").get<int>(), j.at("name").get<std::string>(), j.at("probability").get<double>()};
}

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

float quantize_coordinate(float v) { return static_cast<float>(three_decimals(v)); }

std::vector<Line> quantize_lines(std::span<const Line> lines) {
  std::vector<Line> out;
  out.reserve(lines.size());
  for (const Line& l : lines)
    out.push_back({quantize_coordinate(l.x0), quantize_coordinate(l.y0), quantize_coordinate(l.x1),
                   quantize_coordinate(l.y1)});
  return out;
}

void TagFile::validate() const {
  if (canvas_size == 0) throw FormatError("tag file: canvas size must be positive");
  try {
    params().validate(canvas_size);
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("tag file: ") + e.what());
  }
}

std::string serialize_tagfile(const TagFile& tag) {
  tag.validate();
  json lines = json::array();
  for (const Line& l : tag.lines)
    lines.push_back({three_decimals(l.x0), three_decimals(l.y0), three_decimals(l.x1), three_decimals(l.y1)});
  const TagMetadata& m = tag.metadata;
  json j = {{"format", kFormat},
            {"version", TagFile::kVersion},
            {"canvas_size", tag.canvas_size},
            {"sigma", tag.sigma},
            {"lines", std::move(lines)},
            {"metadata",
             {{"model_hash", m.model_hash},
              {"image_hash", m.image_hash},
              {"mode", to_string(m.mode)},
              {"target", m.target},
              {"seed", m.seed},
              {"config", m.config},
              {"original", prediction_json(m.original)},
              {"final_prediction", prediction_json(m.final_prediction)}}}};
  return j.dump(2) + "\n";
}

TagFile parse_tagfile(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("tag file is not valid JSON: ") + e.what());
  }
  TagFile tag;
  try {
    if (j.at("format").get<std::string>() != kFormat) throw FormatError("not an advtag tag file");
    const int version = j.at("version").get<int>();
    if (version != TagFile::kVersion) throw VersionError("unsupported tag file version " + std::to_string(version));
    tag.canvas_size = j.at("canvas_size").get<std::size_t>();
    tag.sigma = j.at("sigma").get<double>();
    for (const json& l : j.at("lines")) {
      const auto c = l.get<std::vector<double>>();
      if (c.size() != 4) throw FormatError("each line needs 4 coordinates");
      tag.lines.push_back({static_cast<float>(c[0]), static_cast<float>(c[1]), static_cast<float>(c[2]),
                           static_cast<float>(c[3])});
    }
    const json& m = j.at("metadata");
    tag.metadata.model_hash = m.at("model_hash").get<std::string>();
    tag.metadata.image_hash = m.at("image_hash").get<std::string>();
    tag.metadata.mode = parse_attack_kind(m.at("mode").get<std::string>());
    tag.metadata.target = m.at("target").get<int>();
    tag.metadata.seed = m.at("seed").get<std::uint64_t>();
    tag.metadata.config = m.at("config");
    tag.metadata.original = prediction_from(m.at("original"));
    tag.metadata.final_prediction = prediction_from(m.at("final_prediction"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed tag file: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed tag file: ") + e.what());
  }
  tag.validate();
  return tag;
}

void save_tagfile(const TagFile& tag, const std::filesystem::path& path) {
  const std::string text = serialize_tagfile(tag);
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
    throw IoError("cannot write " + path.string());
  }
}

TagFile load_tagfile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_tagfile(text);
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex16(fnv1a(bytes));
}

std::string hash_image(const Tensor& image) {
  std::string bytes;
  bytes.reserve(image.size());
  for (float v : image.data()) bytes.push_back(static_cast<char>(to_u8(v)));
  return hex16(fnv1a(bytes));
}

std::string render_svg(const TagFile& tag, GuideStyle style, const std::optional<std::string>& image_href) {
  tag.validate();
  if (style == GuideStyle::Overlay && !image_href) throw ConfigError("overlay style needs an image");
  const std::string s = std::to_string(tag.canvas_size);
  const std::string width = fixed3(stroke_width(tag.sigma));
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" version=\"1.1\" "
      << "width=\"" << s << "px\" height=\"" << s << "px\" viewBox=\"0 0 " << s << ' ' << s << "\">\n"
      << "  <metadata>canvas " << s << "x" << s << " px; scale 1 user unit = 1 canvas px; sigma " << tag.sigma
      << "; stroke width " << width << " px (half-intensity diameter)</metadata>\n";
  if (style == GuideStyle::Guide) {
    out << "  <rect x=\"0\" y=\"0\" width=\"" << s << "\" height=\"" << s << "\" fill=\"white\"/>\n";
  } else {
    out << "  <image x=\"0\" y=\"0\" width=\"" << s << "\" height=\"" << s << "\" xlink:href=\""
        << xml_escape(*image_href) << "\"/>\n";
  }
  for (const Line& l : tag.lines) {
    out << "  <path d=\"M " << fixed3(l.x0) << ' ' << fixed3(l.y0) << " L " << fixed3(l.x1) << ' ' << fixed3(l.y1)
        << "\" stroke=\"black\" stroke-width=\"" << width << "\" stroke-linecap=\"round\" fill=\"none\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace advtag
