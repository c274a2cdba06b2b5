#include "tempo/commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

namespace tempo::cli {

using config::json;
using config::RunConfig;

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

data::NormStats identity_stats(std::size_t features) {
  return {std::vector<double>(features, 0.0), std::vector<double>(features, 1.0)};
}

std::vector<data::IrregularSeries> load_series(const RunConfig& c) {
  if (c.data.source == "csv") return data::load_dataset(c.data.csv);
  return data::generate_synthetic(c.data.synthetic);
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::trunc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::out | mode);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return os;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

PreparedData prepare_data(const RunConfig& c) {
  std::vector<data::IrregularSeries> series = load_series(c);
  if (series.empty()) throw Error(ErrorCode::EmptySeries, "dataset is empty");
  PreparedData p;
  p.features = series.front().features;
  p.split = data::split_dataset(std::move(series), c.data.train_fraction, c.data.validation_fraction,
                                training::derive_seed(c.seed, "split"));
  if (p.split.train.empty()) throw Error(ErrorCode::EmptySeries, "training split is empty");
  if (c.data.normalize) {
    p.split = data::normalize(std::move(p.split));
  } else {
    p.split.stats = identity_stats(p.features);
  }
  p.cut = training::resolve_cut(p.split.train, c.data.extrapolation_cut);
  return p;
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.training.fit.seed = seed;
}

std::size_t max_threads() {
  if (const char* env = std::getenv("TEMPO_ODE_THREADS")) {
    std::size_t n = 0;
    const std::string_view s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), n);
    if (res.ec == std::errc() && n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(n, max_threads());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n || failure) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------- generate

json cmd_generate(const RunConfig& c, const std::filesystem::path& out) {
  data::SyntheticSpec spec = c.data.synthetic;
  const auto series = data::generate_synthetic(spec);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  data::write_dataset(out, series);

  std::size_t lo = SIZE_MAX, hi = 0, observed_cells = 0, heldout_cells = 0, observed_times = 0;
  for (const auto& s : series) {
    std::size_t times = 0;
    for (std::size_t t = 0; t < s.length(); ++t) {
      bool any = false;
      for (std::size_t f = 0; f < s.features; ++f) any = any || s.mask[s.cell(t, f)];
      times += any ? 1 : 0;
    }
    lo = std::min(lo, times);
    hi = std::max(hi, times);
    observed_times += times;
    observed_cells += s.observed_count();
    heldout_cells += s.heldout_count();
  }
  const double n = static_cast<double>(series.size());
  json stats{{"samples", series.size()},
             {"grid_size", spec.grid_size},
             {"features", spec.n_features},
             {"seed", spec.seed},
             {"observed_per_sample", {{"min", lo}, {"max", hi}, {"mean", static_cast<double>(observed_times) / n}}},
             {"observed_cells", observed_cells},
             {"heldout_cells", heldout_cells},
             {"sparsity_requested", spec.sparsity},
             {"sparsity_realized", static_cast<double>(observed_times) / (n * static_cast<double>(spec.grid_size))}};
  auto sidecar = out;
  sidecar.replace_filename(out.stem().string() + ".stats.json");
  open_out(sidecar) << config::dump(stats);
  return stats;
}

// ---------------------------------------------------------------- train

TrainResult cmd_train(const RunConfig& c, const std::filesystem::path& out_dir,
                      const std::optional<std::filesystem::path>& resume) {
  config::validate(c);
  const PreparedData prepared = prepare_data(c);
  auto model = config::build_model(c, c.model, prepared.features);
  const ParameterList params = model->parameters();

  TrainResult result;
  if (resume) {
    const config::Checkpoint ck = config::load_checkpoint(*resume);
    if (config::to_json(ck.config.model) != config::to_json(c.model) || ck.features != prepared.features) {
      throw Error(ErrorCode::IncompatibleCheckpoint, "checkpoint model does not match the config");
    }
    config::load_parameters(*model, ck);
    result.state = config::restore_state(ck, params);
  } else {
    result.state.optimizer = training::make_adamax(params, c.training.lr, c.training.decay);
  }

  std::filesystem::create_directories(out_dir);
  result.best = out_dir / "best.json";
  result.final = out_dir / "final.json";
  result.metrics = out_dir / "metrics.jsonl";
  std::ofstream log = open_out(result.metrics, resume ? std::ios::app : std::ios::trunc);

  const training::TaskSpec task{c.task, prepared.cut};
  auto on_epoch = [&](const training::MetricsRecord& rec, bool improved) {
    log << training::to_json_line(rec) << '\n' << std::flush;
    result.history.push_back(rec);
    if (improved) {
      config::save_checkpoint(result.best,
                              config::make_checkpoint(c, *model, result.state, prepared.split.stats, prepared.cut));
    }
  };
  training::fit(*model, prepared.split.train, prepared.split.validation, task, c.training.fit, result.state,
                &prepared.split.stats, on_epoch);
  config::save_checkpoint(result.final,
                          config::make_checkpoint(c, *model, result.state, prepared.split.stats, prepared.cut));
  return result;
}

// ---------------------------------------------------------------- eval

namespace {

std::vector<data::IrregularSeries> eval_series(const config::Checkpoint& ck, const std::string& split,
                                               const std::optional<std::filesystem::path>& data_path) {
  if (data_path) {
    auto series = data::load_dataset(*data_path);
    const bool normalized = ck.config.data.normalize;
    for (auto& s : series) {
      if (s.features != ck.features) {
        throw Error(ErrorCode::IncompatibleCheckpoint, "data has " + std::to_string(s.features) +
                                                           " features, checkpoint " + std::to_string(ck.features));
      }
      if (normalized) data::apply_normalization(s, ck.stats);
    }
    return series;
  }
  PreparedData p = prepare_data(ck.config);
  if (p.features != ck.features) throw Error(ErrorCode::IncompatibleCheckpoint, "feature width changed");
  if (split == "train") return std::move(p.split.train);
  if (split == "validation") return p.split.validation.empty() ? std::move(p.split.train) : std::move(p.split.validation);
  if (split == "test") return std::move(p.split.test);
  throw Error(ErrorCode::InvalidArgument, "unknown split '" + split + "'");
}

}  // namespace

json cmd_eval(const config::Checkpoint& ck, const EvalRequest& req) {
  auto model = config::restore_model(ck);
  const auto series = eval_series(ck, req.split, req.data);
  if (series.empty()) throw Error(ErrorCode::EmptySeries, "split '" + req.split + "' is empty");
  const training::TaskSpec task{req.task.value_or(ck.config.task), ck.cut};
  const training::EvalResult r =
      training::evaluate(*model, series, task, &ck.stats, ck.config.training.fit.batch_size);
  json out = r.metrics;
  if (req.per_sample) {
    json rows = json::array();
    for (const auto& s : r.per_sample) rows.push_back({{"id", s.id}, {"value", s.value}, {"weight", s.weight}});
    out["per_sample"] = rows;
  }
  return out;
}

// ---------------------------------------------------------------- export-trajectory

void cmd_export_trajectory(const config::Checkpoint& ck, const std::string& sample, const std::string& times_spec,
                           std::ostream& out, const std::optional<std::filesystem::path>& data_path) {
  auto model = config::restore_model(ck);
  std::vector<data::IrregularSeries> pool;
  if (data_path) {
    pool = eval_series(ck, "test", data_path);
  } else {
    PreparedData p = prepare_data(ck.config);
    for (auto* part : {&p.split.train, &p.split.validation, &p.split.test}) {
      for (auto& s : *part) pool.push_back(std::move(s));
    }
  }
  auto it = std::find_if(pool.begin(), pool.end(), [&](const data::IrregularSeries& s) { return s.id == sample; });
  if (it == pool.end()) throw Error(ErrorCode::SampleNotFound, "no sample '" + sample + "'");
  const data::IrregularSeries& s = *it;
  const std::size_t D = s.features;

  std::vector<double> times;
  if (times_spec == "observed" || times_spec == "grid") {
    for (std::size_t t = 0; t < s.length(); ++t) {
      bool keep = times_spec == "grid";
      for (std::size_t f = 0; f < D && !keep; ++f) keep = s.mask[s.cell(t, f)];
      if (keep) times.push_back(s.times[t]);
    }
  } else if (times_spec.rfind("uniform:", 0) == 0) {
    std::size_t n = 0;
    const std::string_view num = std::string_view(times_spec).substr(8);
    const auto res = std::from_chars(num.data(), num.data() + num.size(), n);
    if (res.ec != std::errc() || res.ptr != num.data() + num.size() || n == 0) {
      throw Error(ErrorCode::InvalidArgument, "bad times spec '" + times_spec + "'");
    }
    const double a = s.times.front(), b = s.times.back();
    for (std::size_t k = 0; k < n; ++k) {
      times.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1));
    }
    times.back() = n == 1 ? a : b;
  } else {
    throw Error(ErrorCode::InvalidArgument, "bad times spec '" + times_spec + "'");
  }
  if (times.empty()) throw Error(ErrorCode::EmptySeries, "sample has no observed times");

  const models::Posterior post = models::encode(*model, s);
  const models::Trajectory traj = models::decode_batch(*model, post.mu, s.times.front(), times);

  const auto& st = ck.stats;
  auto original = [&](double v, std::size_t f) { return ck.config.data.normalize ? v * st.std[f] + st.mean[f] : v; };
  out << "time";
  for (std::size_t f = 0; f < D; ++f) out << ",f" << f + 1;
  for (std::size_t f = 0; f < D; ++f) out << ",mask_f" << f + 1;
  for (std::size_t f = 0; f < D; ++f) out << ",pred_f" << f + 1;
  out << '\n';
  for (std::size_t k = 0; k < times.size(); ++k) {
    const auto row = std::lower_bound(s.times.begin(), s.times.end(), times[k]);
    const bool on_sample = row != s.times.end() && *row == times[k];
    const std::size_t t = static_cast<std::size_t>(row - s.times.begin());
    out << format_double(times[k]);
    for (std::size_t f = 0; f < D; ++f) {
      out << ',';
      if (on_sample && s.mask[s.cell(t, f)]) out << format_double(original(s.values[s.cell(t, f)], f));
    }
    for (std::size_t f = 0; f < D; ++f) out << ',' << (on_sample && s.mask[s.cell(t, f)] ? 1 : 0);
    for (std::size_t f = 0; f < D; ++f) out << ',' << format_double(original(traj.outputs[k][f], f));
    out << '\n';
  }
}

// ---------------------------------------------------------------- param-count

std::size_t config_features(const RunConfig& c) {
  if (c.data.source == "synthetic") return c.data.synthetic.n_features;
  const auto series = data::load_csv(c.data.csv);
  if (series.empty()) throw Error(ErrorCode::EmptySeries, "dataset is empty");
  return series.front().features;
}

json param_count_report(const RunConfig& c) {
  const std::size_t features = config_features(c);
  auto count = [&](const models::ModelConfig& m) {
    auto model = config::build_model(c, m, features);
    const models::ParamCount pc = models::param_count(*model);
    return json{{"temporal", m.temporal}, {"total", pc.total}, {"components", pc.breakdown}};
  };
  json report{{"features", features}, {"model", count(c.model)}};
  if (c.compare) {
    report["compare"] = count(*c.compare);
    report["ratio"] = report["compare"]["total"].get<double>() / report["model"]["total"].get<double>();
  }
  return report;
}

std::string cmd_param_count(const RunConfig& c) {
  const json r = param_count_report(c);
  const bool both = r.contains("compare");
  std::ostringstream os;
  auto row = [&](const std::string& name, const json& a, const json& b) {
    os << std::left << std::setw(22) << name << std::right << std::setw(12) << a.dump();
    if (both) os << std::setw(12) << b.dump();
    os << '\n';
  };
  row("component", "model", "compare");
  std::set<std::string> names;
  for (const auto& [k, v] : r["model"]["components"].items()) names.insert(k);
  if (both) {
    for (const auto& [k, v] : r["compare"]["components"].items()) names.insert(k);
  }
  auto cell = [&](const char* which, const std::string& k) -> json {
    if (!r.contains(which) || !r[which]["components"].contains(k)) return 0;
    return r[which]["components"][k];
  };
  for (const auto& k : names) row(k, cell("model", k), cell("compare", k));
  row("total", r["model"]["total"], both ? r["compare"]["total"] : json());
  if (both) {
    os << std::left << std::setw(22) << "ratio compare/model" << std::right << std::setw(12)
       << format_double(r["ratio"].get<double>()) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- bench-overhead

json cmd_bench_overhead(const RunConfig& c, std::size_t epochs) {
  if (epochs == 0) throw Error(ErrorCode::InvalidArgument, "bench needs at least one epoch");
  const PreparedData prepared = prepare_data(c);
  const training::TaskSpec task{c.task, prepared.cut};
  const models::ModelConfig reference_cfg = c.compare.value_or(c.model);

  struct Arm {
    std::unique_ptr<models::LatentOdeModel> model;
    training::AdamaxState opt;
    std::vector<double> seconds;
  };
  auto make_arm = [&](const models::ModelConfig& m) {
    Arm a{config::build_model(c, m, prepared.features), {}, {}};
    a.opt = training::make_adamax(a.model->parameters(), c.training.lr, c.training.decay);
    return a;
  };
  Arm candidate = make_arm(c.model), reference = make_arm(reference_cfg);
  const std::span<const data::IrregularSeries> none;
  for (std::size_t e = 1; e <= epochs; ++e) {
    for (Arm* a : {&reference, &candidate}) {
      const auto rec = training::train_epoch(*a->model, prepared.split.train, none, task, c.training.fit, a->opt, e,
                                             &prepared.split.stats);
      a->seconds.push_back(rec.seconds);
    }
  }
  auto arm_json = [](const Arm& a, const models::ModelConfig& m) {
    return json{{"temporal", m.temporal},
                {"params", models::param_count(*a.model).total},
                {"epoch_seconds", a.seconds},
                {"median_seconds", median(a.seconds)}};
  };
  const double ratio = median(candidate.seconds) / median(reference.seconds);
  json out{{"epochs", epochs},
           {"candidate", arm_json(candidate, c.model)},
           {"reference", arm_json(reference, reference_cfg)},
           {"ratio", ratio}};
  if (c.model.temporal != reference_cfg.temporal) {
    const Arm& tw = c.model.temporal ? candidate : reference;
    const Arm& st = c.model.temporal ? reference : candidate;
    out["temporal_seconds_per_epoch"] = median(tw.seconds);
    out["static_seconds_per_epoch"] = median(st.seconds);
    out["ratio"] = median(tw.seconds) / median(st.seconds);
  }
  return out;
}

// ---------------------------------------------------------------- entry point

namespace {

void report_error(std::ostream& err, const std::string& code, const std::string& message) {
  err << json{{"error", code}, {"message", message}}.dump() << '\n';
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
  } else {
    open_out(out_path) << text;
  }
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent ODE models with temporal weights for irregular time series", "tempo_ode"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_path, task_name, split = "test", data_path, sample, times = "grid";
  std::optional<std::uint64_t> seed;
  bool per_sample = false, as_json = false;
  std::size_t epochs = 3;

  const std::vector<std::string> tasks{"reconstruction", "extrapolation", "classification",
                                       "per-time-classification"};
  const CLI::Validator times_spec(
      [](std::string& s) -> std::string {
        if (s == "observed" || s == "grid") return {};
        if (s.rfind("uniform:", 0) == 0 && s.size() > 8 &&
            std::all_of(s.begin() + 8, s.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) && s != "uniform:0") {
          return {};
        }
        return "expected observed, grid or uniform:N";
      },
      "observed|grid|uniform:N");

  auto* gen = app.add_subcommand("generate", "write the synthetic dataset, its heldout file and a stats sidecar");
  gen->add_option("--config", config_path, "run config")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_path, "dataset CSV path")->required();
  gen->add_option("--seed", seed, "override the dataset seed");

  auto* train = app.add_subcommand("train", "train a model and write checkpoints and a metrics log");
  train->add_option("--config", config_path, "run config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--checkpoint", checkpoint_path, "resume from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "override the root seed");

  auto* eval = app.add_subcommand("eval", "print metrics of a checkpoint as JSON");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--task", task_name, "task to score")->check(CLI::IsMember(tasks));
  eval->add_option("--split", split, "train, validation or test")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  eval->add_option("--data", data_path, "CSV dataset to score instead")->check(CLI::ExistingFile);
  eval->add_flag("--per-sample", per_sample, "include per-sample values");
  eval->add_option("--out", out_path, "write JSON here instead of stdout");

  auto* exp = app.add_subcommand("export-trajectory", "write a decoded trajectory as CSV");
  exp->add_option("--checkpoint", checkpoint_path, "checkpoint")->required()->check(CLI::ExistingFile);
  exp->add_option("--sample", sample, "sample id")->required();
  exp->add_option("--times", times, "observed, grid or uniform:N")->check(times_spec);
  exp->add_option("--data", data_path, "CSV dataset holding the sample")->check(CLI::ExistingFile);
  exp->add_option("--out", out_path, "CSV path; stdout when omitted");

  auto* pc = app.add_subcommand("param-count", "parameter counts per component");
  pc->add_option("--config", config_path, "run config")->required()->check(CLI::ExistingFile);
  pc->add_flag("--json", as_json, "print JSON instead of a table");

  auto* bench = app.add_subcommand("bench-overhead", "median epoch time of model against compare");
  bench->add_option("--config", config_path, "run config")->required()->check(CLI::ExistingFile);
  bench->add_option("--epochs", epochs, "epochs per model")->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed, "override the root seed");
  bench->add_option("--out", out_path, "write JSON here instead of stdout");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "UsageError", e.what());
    err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 2;
  }

  try {
    auto load = [&] {
      RunConfig c = config::load_config(config_path);
      if (seed) apply_seed(c, *seed);
      return c;
    };
    if (gen->parsed()) {
      RunConfig c = config::load_config(config_path);
      if (seed) c.data.synthetic.seed = *seed;
      out << config::dump(cmd_generate(c, out_path));
    } else if (train->parsed()) {
      const auto r = cmd_train(load(), out_path,
                               checkpoint_path.empty() ? std::nullopt : std::optional(std::filesystem::path(checkpoint_path)));
      out << json{{"best", r.best.string()},
                  {"final", r.final.string()},
                  {"metrics", r.metrics.string()},
                  {"epoch", r.state.epoch},
                  {"best_epoch", r.state.best_epoch}}
                 .dump()
          << '\n';
    } else if (eval->parsed()) {
      EvalRequest req;
      if (!task_name.empty()) req.task = training::parse_task(task_name);
      req.split = split;
      if (!data_path.empty()) req.data = data_path;
      req.per_sample = per_sample;
      emit(cmd_eval(config::load_checkpoint(checkpoint_path), req).dump() + "\n", out_path, out);
    } else if (exp->parsed()) {
      std::ostringstream os;
      cmd_export_trajectory(config::load_checkpoint(checkpoint_path), sample, times, os,
                            data_path.empty() ? std::nullopt : std::optional(std::filesystem::path(data_path)));
      emit(os.str(), out_path, out);
    } else if (pc->parsed()) {
      const RunConfig c = load();
      out << (as_json ? param_count_report(c).dump(2) + "\n" : cmd_param_count(c));
    } else if (bench->parsed()) {
      emit(cmd_bench_overhead(load(), epochs).dump() + "\n", out_path, out);
    }
  } catch (const Error& e) {
    report_error(err, std::string(to_string(e.code())), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "RuntimeError", e.what());
    return 1;
  }
  return 0;
}

}  // namespace tempo::cli
