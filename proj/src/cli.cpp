#include "advtag/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "advtag/classifier.hpp"
#include "advtag/config_json.hpp"
#include "advtag/dataset.hpp"
#include "advtag/errors.hpp"
#include "advtag/harness.hpp"
#include "advtag/image_io.hpp"
#include "advtag/optimizer.hpp"
#include "advtag/tagfile.hpp"

namespace advtag::cli {
namespace {

std::string percent(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * p);
  return buf;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::vector<std::string> class_names(const std::filesystem::path& model, std::size_t classes) {
  std::vector<std::string> names;
  if (std::filesystem::exists(labels_path(model))) names = read_labels(labels_path(model));
  for (std::size_t c = names.size(); c < classes; ++c) names.push_back("class" + std::to_string(c));
  names.resize(classes);
  return names;
}

int resolve_class(const std::string& name, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  if (!name.empty() && name.find_first_not_of("0123456789") == std::string::npos) {
    const int c = std::stoi(name);
    if (static_cast<std::size_t>(c) < names.size()) return c;
  }
  std::string valid;
  for (const std::string& n : names) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown class '" + name + "'; valid classes: " + valid);
}

Tensor load_image_for(const std::filesystem::path& path, const ClassifierModel& model) {
  Tensor image = read_png(path);
  const std::size_t s = model.input_size();
  if (image.dim(1) != s || image.dim(2) != s) {
    throw ConfigError("image " + path.string() + " is " + std::to_string(image.dim(2)) + "x" +
                      std::to_string(image.dim(1)) + " but the model expects " + std::to_string(s) + "x" +
                      std::to_string(s));
  }
  return image;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const std::string& suffix) {
  return prefix.string() + suffix;
}

struct SynthArgs {
  std::string kind = "shapes";
  std::size_t count = 1000;
  std::size_t size = 64;
  std::uint64_t seed = 1;
  std::string out;
};

struct TrainArgs {
  std::string data;
  std::string out = "model.bin";
  TrainOptions options;
  double holdout = 0.1;
};

struct AttackArgs {
  std::string image, model, out = "tag";
  int lines = 4, steps = 10000, expansion = 10, prune_interval = 100, resets = 4;
  std::optional<int> patience;
  double lr = 0.5, sigma = 0.0;
  std::string mode = "untargeted";
  std::optional<std::string> target;
  bool no_robust = false;
  std::optional<double> jitter, erase;
  std::optional<int> aux;
  std::vector<float> bbox;
  std::optional<double> len_min, len_max;
  std::uint64_t seed = 0;
};

struct RenderArgs {
  std::string tagfile, style = "guide", image, out;
};

struct EvaluateArgs {
  std::string tagfile, image, model;
  int trials = 100;
  double jitter = 0.05, erase = 0.25;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  Dataset data;
  if (a.kind == "shapes") {
    data = resize_dataset(make_shapes_dataset(a.count, a.seed), a.size);
  } else if (a.kind == "textures") {
    data = make_textures_dataset(a.count, a.seed, a.size);
  } else if (a.kind == "toy") {
    data = make_toy_dataset(a.count, a.seed, a.size);
  } else {
    throw ConfigError("--kind must be 'shapes', 'textures' or 'toy'");
  }
  const std::filesystem::path path(a.out);
  if (path.extension().empty())
    save_png_dir(data, path);
  else
    save_packed(data, path);
  out << "Wrote " << data.size() << " images (" << data.num_classes << " classes, " << data.image_size << " px) to "
      << path.string() << "\n";
  return kSuccess;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (!(a.holdout >= 0.0 && a.holdout < 1.0)) throw ConfigError("--holdout must be in [0, 1)");
  const Dataset data = load_dataset(a.data);
  auto [train_set, held] = split_holdout(data, a.holdout);
  TrainLog log;
  const ClassifierModel model = train(train_set, a.options, &log);
  save_model(model, a.out);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < data.num_classes; ++c) names.push_back(data.class_name(static_cast<int>(c)));
  write_labels(names, labels_path(a.out));
  out << "Trained on " << train_set.size() << " images, final epoch loss " << fixed3(log.epoch_losses.back()) << "\n";
  if (!held.empty())
    out << "Held-out accuracy: " << percent(accuracy(model, held)) << " (" << held.size() << " images)\n";
  out << "Saved " << a.out << "\n";
  return kSuccess;
}

int cmd_attack(const AttackArgs& a, std::ostream& out) {
  const ClassifierModel model = load_model(a.model);
  const std::vector<std::string> names = class_names(a.model, model.num_classes());
  const Tensor image = load_image_for(a.image, model);

  AttackConfig cfg;
  cfg.max_lines = a.lines;
  cfg.max_steps = a.steps;
  cfg.expansion = a.expansion;
  cfg.prune_interval = a.prune_interval;
  cfg.max_resets = a.resets;
  cfg.patience = a.patience.value_or(a.steps > 0 ? std::min(1000, a.steps) : 1000);
  cfg.learning_rate = a.lr;
  cfg.sigma = a.sigma;
  cfg.seed = a.seed;
  cfg.mode.kind = parse_attack_kind(a.mode);
  if (cfg.mode.kind == AttackKind::Targeted) {
    if (!a.target) throw ConfigError("--mode targeted needs --target");
    cfg.mode.target = resolve_class(*a.target, names);
  } else if (a.target) {
    throw ConfigError("--target only applies to --mode targeted");
  }
  if (a.no_robust) {
    cfg.robustness = RobustnessConfig::non_robust();
  }
  if (a.jitter) cfg.robustness.jitter = *a.jitter;
  if (a.erase) cfg.robustness.erase = *a.erase;
  if (a.aux) cfg.robustness.aux_draws = *a.aux;
  if (!a.bbox.empty()) {
    if (a.bbox.size() != 4) throw ConfigError("--bbox needs x0,y0,x1,y1");
    cfg.search_bbox = BoundingBox{a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]};
  }
  if (a.len_min || a.len_max) {
    const double diag = BoundingBox::full(model.input_size()).diagonal();
    cfg.line_length = LengthRange{a.len_min.value_or(0.0), a.len_max.value_or(diag)};
  }

  const AttackResult result = attack(image, model, cfg);

  TagFile tag;
  tag.canvas_size = model.input_size();
  tag.sigma = result.best_lines.sigma;
  tag.lines = quantize_lines(result.best_lines.lines);
  const Tensor log_probs = predict_with_tag(tag.params(), image, model);
  const int final_label = argmax(log_probs.data());
  const double final_p = std::exp(static_cast<double>(log_probs[static_cast<std::size_t>(final_label)]));
  TagMetadata& m = tag.metadata;
  m.model_hash = hash_file(a.model);
  m.image_hash = hash_image(image);
  m.mode = cfg.mode.kind;
  m.target = result.target;
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.original = {result.original.label, names[static_cast<std::size_t>(result.original.label)],
                result.original.probability};
  m.final_prediction = {final_label, names[static_cast<std::size_t>(final_label)], final_p};

  const std::filesystem::path prefix(a.out);
  save_tagfile(tag, with_suffix(prefix, ".json"));
  write_png(with_suffix(prefix, "_composite.png"), apply_tag(tag.params(), image));
  write_png(with_suffix(prefix, "_guide.png"), guide_image(tag.params(), tag.canvas_size));

  out << "Before attack: " << m.original.name << " (" << percent(m.original.probability) << ")\n";
  out << "After attack: " << m.final_prediction.name << " (" << percent(m.final_prediction.probability) << ")\n";
  out << "Lines: " << tag.lines.size() << ", steps: " << result.steps_used << ", resets: " << result.resets_used
      << "\n";
  const bool success = cfg.mode.kind == AttackKind::Targeted ? final_label == cfg.mode.target
                                                             : final_label != result.original.label;
  return success ? kSuccess : kUnsuccessful;
}

int cmd_render(const RenderArgs& a, std::ostream& out) {
  GuideStyle style;
  if (a.style == "guide")
    style = GuideStyle::Guide;
  else if (a.style == "overlay")
    style = GuideStyle::Overlay;
  else
    throw ConfigError("--style must be 'guide' or 'overlay'");
  if (style == GuideStyle::Overlay && a.image.empty()) throw ConfigError("--style overlay needs --image");
  const TagFile tag = load_tagfile(a.tagfile);
  const std::filesystem::path prefix = a.out.empty() ? std::filesystem::path(a.tagfile).replace_extension() : std::filesystem::path(a.out);
  const std::filesystem::path svg = with_suffix(prefix, a.style == "guide" ? "_guide.svg" : "_overlay.svg");
  const std::filesystem::path png = with_suffix(prefix, a.style == "guide" ? "_guide.png" : "_overlay.png");
  if (style == GuideStyle::Guide) {
    write_png(png, guide_image(tag.params(), tag.canvas_size));
  } else {
    const Tensor image = read_png(a.image);
    if (image.dim(1) != tag.canvas_size || image.dim(2) != tag.canvas_size) {
      throw ConfigError("image size does not match the tag canvas (" + std::to_string(tag.canvas_size) + " px)");
    }
    write_png(png, apply_tag(tag.params(), image));
  }
  const std::string text =
      render_svg(tag, style, style == GuideStyle::Overlay ? std::optional<std::string>(a.image) : std::nullopt);
  std::ofstream f(svg, std::ios::binary);
  if (!f || !f.write(text.data(), static_cast<std::streamsize>(text.size()))) throw IoError("cannot write " + svg.string());
  out << "Wrote " << svg.string() << " and " << png.string() << "\n";
  return kSuccess;
}

int cmd_batch(const std::string& spec_path, std::ostream& out) {
  const ExperimentSpec spec = load_experiment_spec(spec_path);
  const std::vector<CellReport> reports = run_sweep(spec);
  std::filesystem::path summary = spec.output;
  summary.replace_filename(spec.output.stem().string() + "_summary.csv");
  report(reports, spec.output, summary);
  out << summary_table(reports);
  return kSuccess;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const ClassifierModel model = load_model(a.model);
  const Tensor image = load_image_for(a.image, model);
  const TagFile tag = load_tagfile(a.tagfile);
  if (tag.canvas_size != model.input_size()) throw ConfigError("tag canvas does not match the model input size");
  RobustnessConfig error{a.jitter, a.erase, 1};
  error.validate();

  AttackResult result;
  result.best_lines = tag.params();
  const Tensor clean = model.predict(image);
  result.original.label = argmax(clean.data());
  result.target = tag.metadata.mode == AttackKind::Targeted ? tag.metadata.target : result.original.label;
  if (result.target < 0 || static_cast<std::size_t>(result.target) >= model.num_classes()) {
    throw ConfigError("tag target class is out of range for this model");
  }
  result.final_prediction.label = argmax(predict_with_tag(tag.params(), image, model).data());
  const Retention r = simulate_human_error(result, image, model, a.trials, error, a.seed);
  out << "Retention: " << fixed3(r.changed) << "\n";
  out << "Retained new class: " << fixed3(r.new_class) << "\n";
  return kSuccess;
}

}  // namespace

std::filesystem::path labels_path(const std::filesystem::path& model) {
  return std::filesystem::path(model).replace_extension(".labels");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial line tags: synth, train, attack, render, batch, evaluate"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic image dataset");
  s->add_option("--kind", synth.kind, "shapes or textures (10 classes each), or toy (dark/bright)");
  s->add_option("--count", synth.count, "Number of images")->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size, "Image side in pixels")->check(CLI::Range(10, 1024));
  s->add_option("--seed", synth.seed);
  s->add_option("--out", synth.out, "Packed file (with extension) or PNG directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the classifier");
  t->add_option("--data", tr.data, "Dataset: packed file or PNG directory")->required();
  t->add_option("--out", tr.out, "Model output path");
  t->add_option("--epochs", tr.options.epochs)->check(CLI::PositiveNumber);
  t->add_option("--lr", tr.options.learning_rate)->check(CLI::PositiveNumber);
  t->add_option("--momentum", tr.options.momentum)->check(CLI::Range(0.0, 1.0));
  t->add_option("--batch", tr.options.batch_size)->check(CLI::PositiveNumber);
  t->add_option("--holdout", tr.holdout, "Held-out fraction");
  t->add_option("--seed", tr.options.seed);

  AttackArgs at;
  auto* a = app.add_subcommand("attack", "Optimise a line tag for one image");
  a->add_option("image", at.image, "Input PNG")->required();
  a->add_option("--model", at.model)->required();
  a->add_option("--lines", at.lines, "Maximum number of lines");
  a->add_option("--steps", at.steps);
  a->add_option("--expansion", at.expansion);
  a->add_option("--prune-interval", at.prune_interval);
  a->add_option("--patience", at.patience);
  a->add_option("--resets", at.resets);
  a->add_option("--lr", at.lr);
  a->add_option("--sigma", at.sigma, "Stroke kernel sigma (0 = default for the canvas)");
  a->add_option("--mode", at.mode, "untargeted or targeted");
  a->add_option("--target", at.target, "Target class name or index");
  a->add_flag("--robust,!--no-robust", [&](std::int64_t n) { at.no_robust = n < 0; }, "Robust loss (default on)");
  a->add_option("--jitter", at.jitter);
  a->add_option("--erase", at.erase);
  a->add_option("--aux", at.aux, "Auxiliary draws");
  a->add_option("--bbox", at.bbox, "x0,y0,x1,y1")->delimiter(',')->expected(4);
  a->add_option("--len-min", at.len_min);
  a->add_option("--len-max", at.len_max);
  a->add_option("--seed", at.seed);
  a->add_option("--out", at.out, "Output prefix");

  RenderArgs rd;
  auto* r = app.add_subcommand("render", "Export a tracing guide or overlay");
  r->add_option("tagfile", rd.tagfile)->required();
  r->add_option("--style", rd.style, "guide or overlay");
  r->add_option("--image", rd.image, "Image for the overlay style");
  r->add_option("--out", rd.out, "Output prefix");

  std::string spec_path;
  auto* b = app.add_subcommand("batch", "Run an experiment sweep");
  b->add_option("spec", spec_path, "Experiment spec (JSON)")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Retention of a tag under simulated drawing error");
  e->add_option("tagfile", ev.tagfile)->required();
  e->add_option("image", ev.image)->required();
  e->add_option("--model", ev.model)->required();
  e->add_option("--trials", ev.trials);
  e->add_option("--jitter", ev.jitter);
  e->add_option("--erase", ev.erase);
  e->add_option("--seed", ev.seed);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    const auto used = app.get_subcommands();
    err << (used.empty() ? app.help() : used.front()->help());
    return kConfigError;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(tr, out);
    if (*a) return cmd_attack(at, out);
    if (*r) return cmd_render(rd, out);
    if (*b) return cmd_batch(spec_path, out);
    if (*e) return cmd_evaluate(ev, out);
  } catch (const ConfigError& ex) {
    err << "configuration error: " << ex.what() << "\n";
    return kConfigError;
  } catch (const ContractViolation& ex) {
    err << "invalid input: " << ex.what() << "\n";
    return kConfigError;
  } catch (const IoError& ex) {
    err << "I/O error: " << ex.what() << "\n";
    return kIoError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kIoError;
  }
  return kConfigError;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace advtag::cli
