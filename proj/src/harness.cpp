#include "advtag/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iterator>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "advtag/config_json.hpp"
#include "advtag/errors.hpp"
#include "advtag/rng.hpp"

namespace advtag {
namespace {

using nlohmann::json;

constexpr std::uint64_t kTargetStream = 0x7a26;
constexpr std::uint64_t kRetentionStream = 0x7e7e;

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string optional_field(const std::optional<double>& v) { return v ? shortest(*v) : std::string(); }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == sep)
      out.emplace_back();
    else
      out.back() += c;
  }
  return out;
}

template <class T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError(std::string("bad ") + what + " field '" + s + "'");
  }
  return v;
}

bool parse_flag(const std::string& s, const char* what) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw FormatError(std::string("bad ") + what + " field '" + s + "'");
}

std::optional<double> parse_optional(const std::string& s, const char* what) {
  if (s.empty()) return std::nullopt;
  return parse_number<double>(s, what);
}

bool csv_safe(const std::string& id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

int thread_count() {
  if (const char* env = std::getenv("ADVTAG_THREADS")) {
    const std::string s(env);
    int n = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc() || ptr != s.data() + s.size() || n < 1) {
      throw ConfigError("ADVTAG_THREADS must be a positive integer, got '" + s + "'");
    }
    return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

struct Job {
  std::size_t config;
  int image;
};

ImageRow run_job(const ExperimentSpec& spec, const SweepConfig& sc, int image_id, const Dataset& data,
                 const ClassifierModel& model) {
  const Tensor& image = data.items[static_cast<std::size_t>(image_id)].pixels;
  AttackConfig cfg = sc.attack;
  cfg.seed = image_seed(spec.seed, image_id, sc.id);
  const int clean = argmax(model.predict(image).data());
  if (cfg.mode.kind == AttackKind::Targeted) {
    Rng rng(derive_seed(cfg.seed, kTargetStream));
    auto t = static_cast<int>(rng.below(model.num_classes() - 1));
    if (t >= clean) ++t;
    cfg.mode.target = t;
  }
  const AttackResult result = attack(image, model, cfg);
  const bool targeted = cfg.mode.kind == AttackKind::Targeted;
  const bool success = targeted ? result.reached_target : result.flipped;

  ImageRow row;
  row.config_id = sc.id;
  row.image_id = image_id;
  row.clean_class = result.original.label;
  row.final_class = result.final_prediction.label;
  row.flipped = result.flipped;
  row.reached_target = result.reached_target;
  row.steps = success && result.first_success_step ? *result.first_success_step : result.steps_used;
  row.resets = result.resets_used;
  row.target_class = result.target;
  row.confidence = result.final_prediction.probability;
  if (spec.retention) {
    const Retention r = simulate_human_error(result, image, model, spec.retention->trials, spec.retention->error,
                                             derive_seed(cfg.seed, kRetentionStream));
    row.retention = r.changed;
    row.retained_new_class = r.new_class;
  }
  return row;
}

// Complete rows of a previous run, after truncating a torn last line.
std::vector<ImageRow> resume_rows(const std::filesystem::path& path, const std::vector<Job>& jobs,
                                  const ExperimentSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  if (text.empty()) return {};
  const std::string header = csv_header();
  if (text.compare(0, header.size() + 1, header + "\n") != 0) {
    throw IoError(path.string() + " exists and is not a sweep report; refusing to overwrite");
  }
  std::vector<ImageRow> rows;
  std::size_t pos = header.size() + 1;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    ImageRow row;
    try {
      row = parse_row(text.substr(pos, nl - pos));
    } catch (const FormatError& e) {
      throw IoError(path.string() + ": unreadable row in prior output: " + e.what());
    }
    const std::size_t k = rows.size();
    if (k >= jobs.size() || row.config_id != spec.configs[jobs[k].config].id || row.image_id != jobs[k].image) {
      throw IoError(path.string() + ": prior output does not match this experiment; refusing to overwrite");
    }
    rows.push_back(std::move(row));
    pos = nl + 1;
  }
  return rows;
}

}  // namespace

const std::vector<std::string> kCsvColumns{"config_id", "image_id",       "clean_class", "final_class",
                                           "flipped",   "reached_target", "steps",       "resets",
                                           "retention", "target_class",   "confidence",  "retained_new_class"};

void ExperimentSpec::validate() const {
  if (configs.empty()) throw ConfigError("experiment needs at least one config");
  if (images_per_cell < 1) throw ConfigError("images_per_cell must be >= 1");
  std::set<std::string> seen;
  for (const SweepConfig& c : configs) {
    if (!csv_safe(c.id)) throw ConfigError("config id '" + c.id + "' must be nonempty [A-Za-z0-9_.-]");
    if (!seen.insert(c.id).second) throw ConfigError("duplicate config id '" + c.id + "'");
  }
  if (retention) {
    if (retention->trials < 1) throw ConfigError("retention trials must be >= 1");
    retention->error.validate();
  }
  if (output.empty()) throw ConfigError("experiment needs an output path");
}

ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open experiment spec " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("experiment spec is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("experiment spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> known{"dataset", "model",  "configs",  "images_per_cell",
                                             "seed",    "output", "retention"};
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in experiment spec");
  }
  const std::filesystem::path base = path.parent_path();
  ExperimentSpec spec;
  try {
    spec.dataset = resolve(base, j.at("dataset").get<std::string>());
    spec.model = resolve(base, j.at("model").get<std::string>());
    spec.output = resolve(base, j.at("output").get<std::string>());
    spec.images_per_cell = j.value("images_per_cell", 1);
    spec.seed = j.value("seed", std::uint64_t{0});
    for (const json& c : j.at("configs")) {
      SweepConfig sc;
      sc.id = c.at("id").get<std::string>();
      sc.attack = attack_config_from_json(c, {"id"});
      spec.configs.push_back(std::move(sc));
    }
    if (j.contains("retention")) {
      json r = j.at("retention");
      RetentionSpec rs;
      if (r.contains("trials")) {
        rs.trials = r.at("trials").get<int>();
        r.erase("trials");
      }
      rs.error = robustness_from_json(r);
      spec.retention = rs;
    }
  } catch (const json::exception& e) {
    throw ConfigError("experiment spec: " + std::string(e.what()));
  }
  spec.validate();
  return spec;
}

std::uint64_t image_seed(std::uint64_t sweep_seed, int image_id, const std::string& config_id) {
  return derive_seed(sweep_seed, static_cast<std::uint64_t>(image_id), fnv1a(config_id));
}

Retention simulate_human_error(const AttackResult& result, const Tensor& image, const ClassifierModel& model,
                               int trials, const RobustnessConfig& error, std::uint64_t seed) {
  if (trials < 1) throw ContractViolation("simulate_human_error: trials must be >= 1");
  const bool targeted = result.target != result.original.label;
  int changed = 0, same_new = 0;
  for (int t = 0; t < trials; ++t) {
    const Tensor drawn = simulate_drawing(result.best_lines, image, error, derive_seed(seed, static_cast<std::uint64_t>(t)));
    const int cls = argmax(model.predict(drawn).data());
    if (targeted ? cls == result.target : cls != result.original.label) ++changed;
    if (cls == result.final_prediction.label) ++same_new;
  }
  return {static_cast<double>(changed) / trials, static_cast<double>(same_new) / trials};
}

CellReport summarize(const std::string& config_id, bool targeted, std::vector<ImageRow> rows) {
  CellReport cell;
  cell.config_id = config_id;
  cell.targeted = targeted;
  cell.attempted = rows.size();
  std::size_t flipped = 0, reached = 0;
  std::vector<double> steps;
  double retention = 0.0, new_class = 0.0;
  std::size_t with_retention = 0;
  for (const ImageRow& r : rows) {
    flipped += r.flipped;
    reached += r.reached_target;
    const bool success = targeted ? r.reached_target : r.flipped;
    if (!success) continue;
    steps.push_back(r.steps);
    if (r.retention && r.retained_new_class) {
      retention += *r.retention;
      new_class += *r.retained_new_class;
      ++with_retention;
    }
  }
  const double n = static_cast<double>(rows.size());
  if (!rows.empty()) {
    cell.flip_rate = static_cast<double>(flipped) / n;
    if (targeted) cell.target_rate = static_cast<double>(reached) / n;
  } else if (targeted) {
    cell.target_rate = 0.0;
  }
  if (!steps.empty()) {
    double mean = 0.0;
    for (double s : steps) mean += s;
    mean /= static_cast<double>(steps.size());
    double var = 0.0;
    for (double s : steps) var += (s - mean) * (s - mean);
    cell.mean_steps = mean;
    cell.std_steps = std::sqrt(var / static_cast<double>(steps.size()));
  }
  if (with_retention > 0) {
    cell.retention_under_error = retention / static_cast<double>(with_retention);
    cell.retained_new_class = new_class / static_cast<double>(with_retention);
  }
  cell.rows = std::move(rows);
  return cell;
}

std::string csv_header() {
  std::string h;
  for (const std::string& c : kCsvColumns) h += (h.empty() ? "" : ",") + c;
  return h;
}

std::string format_row(const ImageRow& r) {
  std::ostringstream out;
  out << r.config_id << ',' << r.image_id << ',' << r.clean_class << ',' << r.final_class << ',' << int{r.flipped}
      << ',' << int{r.reached_target} << ',' << r.steps << ',' << r.resets << ',' << optional_field(r.retention) << ','
      << r.target_class << ',' << shortest(r.confidence) << ',' << optional_field(r.retained_new_class);
  return out.str();
}

ImageRow parse_row(const std::string& line) {
  const std::vector<std::string> f = split(line, ',');
  if (f.size() != kCsvColumns.size()) {
    throw FormatError("row has " + std::to_string(f.size()) + " fields, expected " + std::to_string(kCsvColumns.size()));
  }
  ImageRow r;
  r.config_id = f[0];
  r.image_id = parse_number<int>(f[1], "image_id");
  r.clean_class = parse_number<int>(f[2], "clean_class");
  r.final_class = parse_number<int>(f[3], "final_class");
  r.flipped = parse_flag(f[4], "flipped");
  r.reached_target = parse_flag(f[5], "reached_target");
  r.steps = parse_number<int>(f[6], "steps");
  r.resets = parse_number<int>(f[7], "resets");
  r.retention = parse_optional(f[8], "retention");
  r.target_class = parse_number<int>(f[9], "target_class");
  r.confidence = parse_number<double>(f[10], "confidence");
  r.retained_new_class = parse_optional(f[11], "retained_new_class");
  return r;
}

std::vector<ImageRow> read_rows(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != csv_header()) throw FormatError(csv.string() + ": unexpected header");
  std::vector<ImageRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_row(line));
  }
  return rows;
}

std::vector<CellReport> reports_from_csv(const std::filesystem::path& csv) {
  std::vector<std::string> order;
  std::vector<std::vector<ImageRow>> groups;
  for (ImageRow& r : read_rows(csv)) {
    auto it = std::find(order.begin(), order.end(), r.config_id);
    if (it == order.end()) {
      order.push_back(r.config_id);
      groups.emplace_back();
      it = order.end() - 1;
    }
    groups[static_cast<std::size_t>(it - order.begin())].push_back(std::move(r));
  }
  std::vector<CellReport> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool targeted = std::any_of(groups[i].begin(), groups[i].end(),
                                      [](const ImageRow& r) { return r.target_class != r.clean_class; });
    out.push_back(summarize(order[i], targeted, std::move(groups[i])));
  }
  return out;
}

std::vector<CellReport> run_sweep(const ExperimentSpec& spec) {
  spec.validate();
  const Dataset data = load_dataset(spec.dataset);
  const ClassifierModel model = load_model(spec.model);
  return run_sweep(spec, data, model);
}

std::vector<CellReport> run_sweep(const ExperimentSpec& spec, const Dataset& data, const ClassifierModel& model) {
  spec.validate();
  if (data.image_size != model.input_size()) {
    throw ConfigError("dataset images are " + std::to_string(data.image_size) + " px but the model expects " +
                      std::to_string(model.input_size()));
  }
  if (static_cast<std::size_t>(spec.images_per_cell) > data.size()) {
    throw ConfigError("images_per_cell " + std::to_string(spec.images_per_cell) + " exceeds dataset size " +
                      std::to_string(data.size()));
  }
  for (const SweepConfig& c : spec.configs) {
    c.attack.validate(model.input_size());
    if (c.attack.mode.kind == AttackKind::Targeted && model.num_classes() < 2) {
      throw ConfigError("targeted cells need at least 2 classes");
    }
  }

  std::vector<Job> jobs;
  for (std::size_t c = 0; c < spec.configs.size(); ++c)
    for (int i = 0; i < spec.images_per_cell; ++i) jobs.push_back({c, i});

  std::vector<ImageRow> rows = resume_rows(spec.output, jobs, spec);
  {
    std::ofstream out(spec.output, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + spec.output.string());
    out << csv_header() << '\n';
    for (const ImageRow& r : rows) out << format_row(r) << '\n';
    if (!out.flush()) throw IoError("cannot write " + spec.output.string());
  }
  std::ofstream out(spec.output, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + spec.output.string());

  const std::size_t first = rows.size();
  rows.resize(jobs.size());
  std::vector<char> ready(jobs.size(), 0);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{first};
  std::exception_ptr failure;
  std::atomic<bool> stop{false};

  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size() || stop) return;
      try {
        ImageRow row = run_job(spec, spec.configs[jobs[k].config], jobs[k].image, data, model);
        std::lock_guard lock(mu);
        rows[k] = std::move(row);
        ready[k] = 1;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
      cv.notify_all();
    }
  };

  const std::size_t pending = jobs.size() - first;
  const auto workers = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(thread_count()), pending));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);

  // Single writer, rows in job order.
  for (std::size_t k = first; k < jobs.size(); ++k) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return ready[k] || failure; });
    if (failure) break;
    const std::string line = format_row(rows[k]) + "\n";
    lock.unlock();
    if (!out.write(line.data(), static_cast<std::streamsize>(line.size())) || !out.flush()) {
      stop = true;
      for (std::thread& t : pool) t.join();
      throw IoError("cannot append to " + spec.output.string());
    }
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<CellReport> reports;
  for (std::size_t c = 0; c < spec.configs.size(); ++c) {
    const auto begin = rows.begin() + static_cast<std::ptrdiff_t>(c * static_cast<std::size_t>(spec.images_per_cell));
    std::vector<ImageRow> cell(begin, begin + spec.images_per_cell);
    reports.push_back(summarize(spec.configs[c].id, spec.configs[c].attack.mode.kind == AttackKind::Targeted,
                                std::move(cell)));
  }
  return reports;
}

std::string summary_table(const std::vector<CellReport>& reports) {
  std::ostringstream out;
  out << "config_id,attempted,flip_rate,target_rate,mean_steps,std_steps,retention,retained_new_class\n";
  auto opt = [](const std::optional<double>& v) { return v ? fixed3(*v) : std::string(); };
  for (const CellReport& c : reports) {
    out << c.config_id << ',' << c.attempted << ',' << fixed3(c.flip_rate) << ',' << opt(c.target_rate) << ','
        << fixed3(c.mean_steps) << ',' << fixed3(c.std_steps) << ',' << opt(c.retention_under_error) << ','
        << opt(c.retained_new_class) << '\n';
  }
  return out.str();
}

void report(const std::vector<CellReport>& reports, const std::filesystem::path& csv,
            const std::filesystem::path& summary) {
  if (reports.empty()) throw ContractViolation("report: no cells");
  auto write = [](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size())) || !out.flush()) {
      throw IoError("cannot write " + path.string());
    }
  };
  std::string rows = csv_header() + "\n";
  for (const CellReport& c : reports)
    for (const ImageRow& r : c.rows) rows += format_row(r) + "\n";
  write(csv, rows);
  write(summary, summary_table(reports));
}

}  // namespace advtag
