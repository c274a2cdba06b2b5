#include "tempo/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace tempo::config {

namespace {

// Reads typed fields from one JSON object and rejects any key it was not asked about.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail("expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) fail(std::string(key) + " must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) fail(std::string(key) + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (!it->is_number_unsigned() && it->get<std::int64_t>() < 0) fail(std::string(key) + " must be non-negative");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) fail(std::string(key) + " must be a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) fail(std::string(key) + " must be a string");
      }
      out = it->template get<T>();
    } catch (const json::exception& e) {
      fail(std::string(key) + ": " + e.what());
    }
  }

  template <class T, class Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) fail(std::string(key) + " must be a string");
    out = parse(it->template get<std::string>());
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail("unknown key '" + key + "'");
    }
  }

  [[noreturn]] void fail(const std::string& msg) const { throw Error(ErrorCode::InvalidConfig, where_ + ": " + msg); }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

models::ModelConfig model_from_json(const json& j, const std::string& where) {
  models::ModelConfig m;
  Reader r(j, where);
  r.get("latent_dim", m.latent_dim);
  r.get("encoder_hidden", m.encoder_hidden);
  r.get("encoder_ode_units", m.encoder_ode_units);
  r.get("encoder_ode_layers", m.encoder_ode_layers);
  r.get("decoder_ode_units", m.decoder_ode_units);
  r.get("decoder_ode_layers", m.decoder_ode_layers);
  r.get("temporal", m.temporal);
  r.get("temporal_gru", m.temporal_gru);
  r.get_enum("coupling", m.temporal_options.coupling, parse_coupling);
  r.get_enum("range_mode", m.temporal_options.range, parse_range);
  r.get("residual", m.temporal_options.residual);
  r.get("per_weight_rate", m.temporal_options.per_weight_rate);
  r.get_enum("eval", m.temporal_options.eval, parse_eval);
  r.get("n_classes", m.n_classes);
  r.get_enum("classifier_input", m.classifier_input, models::parse_classifier_input);
  r.finish();
  return m;
}

data::SyntheticSpec synthetic_from_json(const json& j) {
  data::SyntheticSpec s;
  Reader r(j, "data.synthetic");
  r.get("n_samples", s.n_samples);
  r.get("grid_size", s.grid_size);
  r.get("n_features", s.n_features);
  r.get("t_start", s.t_start);
  r.get("t_end", s.t_end);
  r.get("freq_lo", s.freq_lo);
  r.get("freq_hi", s.freq_hi);
  r.get("amp_lo", s.amp_lo);
  r.get("amp_hi", s.amp_hi);
  r.get("phase_lo", s.phase_lo);
  r.get("phase_hi", s.phase_hi);
  r.get("noise_sigma", s.noise_sigma);
  r.get("discontinuity_prob", s.discontinuity_prob);
  r.get("jump_lo", s.jump_lo);
  r.get("jump_hi", s.jump_hi);
  r.get("sparsity", s.sparsity);
  r.get("seed", s.seed);
  r.finish();
  return s;
}

json synthetic_to_json(const data::SyntheticSpec& s) {
  return json{{"n_samples", s.n_samples},   {"grid_size", s.grid_size},
              {"n_features", s.n_features}, {"t_start", s.t_start},
              {"t_end", s.t_end},           {"freq_lo", s.freq_lo},
              {"freq_hi", s.freq_hi},       {"amp_lo", s.amp_lo},
              {"amp_hi", s.amp_hi},         {"phase_lo", s.phase_lo},
              {"phase_hi", s.phase_hi},     {"noise_sigma", s.noise_sigma},
              {"discontinuity_prob", s.discontinuity_prob},
              {"jump_lo", s.jump_lo},       {"jump_hi", s.jump_hi},
              {"sparsity", s.sparsity},     {"seed", s.seed}};
}

json buffer_json(std::span<const double> b) { return json(std::vector<double>(b.begin(), b.end())); }

Buffer json_buffer(const json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorCode::IncompatibleCheckpoint, what + " must be an array");
  Buffer out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::IncompatibleCheckpoint, what + " holds a non-number");
    out.push_back(v.get<double>());
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace

json to_json(const models::ModelConfig& m) {
  return json{{"latent_dim", m.latent_dim},
              {"encoder_hidden", m.encoder_hidden},
              {"encoder_ode_units", m.encoder_ode_units},
              {"encoder_ode_layers", m.encoder_ode_layers},
              {"decoder_ode_units", m.decoder_ode_units},
              {"decoder_ode_layers", m.decoder_ode_layers},
              {"temporal", m.temporal},
              {"temporal_gru", m.temporal_gru},
              {"coupling", to_string(m.temporal_options.coupling)},
              {"range_mode", to_string(m.temporal_options.range)},
              {"residual", m.temporal_options.residual},
              {"per_weight_rate", m.temporal_options.per_weight_rate},
              {"eval", to_string(m.temporal_options.eval)},
              {"n_classes", m.n_classes},
              {"classifier_input", models::to_string(m.classifier_input)}};
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Reader r(j, "config");
  r.get("version", c.version);
  if (c.version != kConfigVersion) r.fail("unsupported version " + std::to_string(c.version));
  r.get_enum("task", c.task, training::parse_task);
  r.get("seed", c.seed);
  if (const json* m = r.child("model")) c.model = model_from_json(*m, "model");
  if (const json* m = r.child("compare")) c.compare = model_from_json(*m, "compare");

  if (const json* s = r.child("solver")) {
    Reader sr(*s, "solver");
    sr.get_enum("method", c.solver.method, ode::parse_method);
    sr.get("step", c.solver.step);
    sr.get("rtol", c.solver.rtol);
    sr.get("atol", c.solver.atol);
    sr.get("max_steps", c.solver.max_steps);
    sr.get("initial_step", c.solver.initial_step);
    sr.finish();
  }

  if (const json* t = r.child("training")) {
    Reader tr(*t, "training");
    auto& f = c.training.fit;
    tr.get("lr", c.training.lr);
    tr.get("decay", c.training.decay);
    tr.get("epochs", f.epochs);
    tr.get("batch_size", f.batch_size);
    tr.get("patience", f.patience);
    tr.get("clip_norm", f.clip_norm);
    tr.get_enum("loss", f.loss.kind, training::parse_loss_kind);
    tr.get("obs_noise_std", f.loss.obs_noise_std);
    tr.get("kl_weight", f.loss.kl_weight);
    tr.get("kl_warmup_epochs", f.loss.kl_warmup_epochs);
    tr.get("task_weight", f.loss.task_weight);
    tr.finish();
  }

  if (const json* d = r.child("data")) {
    Reader dr(*d, "data");
    dr.get("source", c.data.source);
    dr.get("csv", c.data.csv);
    if (const json* s = dr.child("synthetic")) c.data.synthetic = synthetic_from_json(*s);
    dr.get("train_fraction", c.data.train_fraction);
    dr.get("validation_fraction", c.data.validation_fraction);
    dr.get("normalize", c.data.normalize);
    dr.get("extrapolation_cut", c.data.extrapolation_cut);
    dr.finish();
  }
  r.finish();
  c.training.fit.seed = c.seed;
  validate(c);
  return c;
}

json to_json(const RunConfig& c) {
  const auto& f = c.training.fit;
  json j{{"version", c.version},
         {"task", training::to_string(c.task)},
         {"seed", c.seed},
         {"model", to_json(c.model)},
         {"solver",
          {{"method", ode::to_string(c.solver.method)},
           {"step", c.solver.step},
           {"rtol", c.solver.rtol},
           {"atol", c.solver.atol},
           {"max_steps", c.solver.max_steps},
           {"initial_step", c.solver.initial_step}}},
         {"training",
          {{"lr", c.training.lr},
           {"decay", c.training.decay},
           {"epochs", f.epochs},
           {"batch_size", f.batch_size},
           {"patience", f.patience},
           {"clip_norm", f.clip_norm},
           {"loss", training::to_string(f.loss.kind)},
           {"obs_noise_std", f.loss.obs_noise_std},
           {"kl_weight", f.loss.kl_weight},
           {"kl_warmup_epochs", f.loss.kl_warmup_epochs},
           {"task_weight", f.loss.task_weight}}},
         {"data",
          {{"source", c.data.source},
           {"csv", c.data.csv},
           {"synthetic", synthetic_to_json(c.data.synthetic)},
           {"train_fraction", c.data.train_fraction},
           {"validation_fraction", c.data.validation_fraction},
           {"normalize", c.data.normalize},
           {"extrapolation_cut", c.data.extrapolation_cut}}}};
  if (c.compare) j["compare"] = to_json(*c.compare);
  return j;
}

void validate(const RunConfig& c) {
  ode::validate(c.solver);
  training::validate(c.training.fit);
  if (!(c.training.lr >= 0) || !(c.training.decay > 0)) {
    throw Error(ErrorCode::InvalidConfig, "training.lr must be >= 0 and training.decay > 0");
  }
  if (c.data.source != "synthetic" && c.data.source != "csv") {
    throw Error(ErrorCode::InvalidConfig, "data.source must be 'synthetic' or 'csv'");
  }
  if (c.data.source == "csv" && c.data.csv.empty()) throw Error(ErrorCode::InvalidConfig, "data.csv is empty");
  const double tf = c.data.train_fraction, vf = c.data.validation_fraction;
  if (!(tf > 0) || !(vf >= 0) || tf + vf > 1.0) {
    throw Error(ErrorCode::InvalidConfig, "split fractions must satisfy 0 < train, 0 <= validation, sum <= 1");
  }
  if (!(c.data.extrapolation_cut > 0 && c.data.extrapolation_cut < 1)) {
    throw Error(ErrorCode::InvalidConfig, "data.extrapolation_cut must lie in (0, 1)");
  }
  for (const auto* m : {&c.model, c.compare ? &*c.compare : nullptr}) {
    if (!m) continue;
    if (m->latent_dim == 0 || m->encoder_hidden == 0 || m->encoder_ode_layers == 0 || m->decoder_ode_layers == 0 ||
        (m->encoder_ode_layers > 1 && m->encoder_ode_units == 0) ||
        (m->decoder_ode_layers > 1 && m->decoder_ode_units == 0)) {
      throw Error(ErrorCode::InvalidConfig, "model widths and layer counts must be positive");
    }
    const bool classification =
        c.task == training::Task::classification || c.task == training::Task::per_time_classification;
    if (classification && m->n_classes == 0) {
      throw Error(ErrorCode::InvalidConfig, "classification tasks need model.n_classes >= 1");
    }
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

void save_config(const std::filesystem::path& path, const RunConfig& c) { write_file(path, dump(to_json(c))); }

// ---------------------------------------------------------------- checkpoints

Checkpoint make_checkpoint(const RunConfig& config, models::LatentOdeModel& model, const training::FitState& state,
                           const data::NormStats& stats, double cut) {
  Checkpoint c;
  c.config = config;
  c.features = model.features();
  c.cut = cut;
  c.state = state;
  c.stats = stats;
  for (const Parameter* p : model.parameters()) {
    c.param_order.push_back(p->name());
    c.params[p->name()] = {p->shape(), Buffer(p->value().begin(), p->value().end())};
  }
  return c;
}

json to_json(const Checkpoint& c) {
  json params = json::object();
  for (const auto& [name, entry] : c.params) {
    params[name] = {{"shape", entry.first}, {"values", buffer_json(entry.second)}};
  }
  const auto& opt = c.state.optimizer;
  json m = json::object(), u = json::object();
  for (std::size_t k = 0; k < c.param_order.size() && k < opt.m.size(); ++k) {
    m[c.param_order[k]] = buffer_json(opt.m[k]);
    u[c.param_order[k]] = buffer_json(opt.u[k]);
  }
  return json{{"format_version", c.format_version},
              {"config", to_json(c.config)},
              {"features", c.features},
              {"cut", c.cut},
              {"params", params},
              {"optimizer",
               {{"lr", opt.lr},
                {"decay", opt.decay},
                {"beta1", opt.beta1},
                {"beta2", opt.beta2},
                {"step", opt.step},
                {"m", m},
                {"u", u}}},
              {"state",
               {{"epoch", c.state.epoch},
                {"best_metric", c.state.best_metric ? json(*c.state.best_metric) : json(nullptr)},
                {"best_epoch", c.state.best_epoch},
                {"since_best", c.state.since_best}}},
              {"stats", {{"mean", c.stats.mean}, {"std", c.stats.std}}}};
}

Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint c;
  try {
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != kCheckpointVersion) {
      throw Error(ErrorCode::IncompatibleCheckpoint, "unsupported checkpoint format " + std::to_string(c.format_version));
    }
    c.config = from_json(j.at("config"));
    c.features = j.at("features").get<std::size_t>();
    c.cut = j.at("cut").get<double>();
    for (const auto& [name, entry] : j.at("params").items()) {
      Shape shape = entry.at("shape").get<Shape>();
      Buffer values = json_buffer(entry.at("values"), name);
      std::size_t n = 1;
      for (auto d : shape) n *= d;
      if (n != values.size()) throw Error(ErrorCode::IncompatibleCheckpoint, name + ": shape and values disagree");
      c.params[name] = {std::move(shape), std::move(values)};
    }
    const json& o = j.at("optimizer");
    auto& opt = c.state.optimizer;
    opt.lr = o.at("lr").get<double>();
    opt.decay = o.at("decay").get<double>();
    opt.beta1 = o.at("beta1").get<double>();
    opt.beta2 = o.at("beta2").get<double>();
    opt.step = o.at("step").get<std::size_t>();
    // Moments are stored by name; the model's parameter order is restored in build order.
    for (const auto& [name, values] : o.at("m").items()) {
      c.param_order.push_back(name);
      opt.m.push_back(json_buffer(values, "optimizer.m." + name));
      opt.u.push_back(json_buffer(o.at("u").at(name), "optimizer.u." + name));
    }
    const json& s = j.at("state");
    c.state.epoch = s.at("epoch").get<std::size_t>();
    if (!s.at("best_metric").is_null()) c.state.best_metric = s.at("best_metric").get<double>();
    c.state.best_epoch = s.at("best_epoch").get<std::size_t>();
    c.state.since_best = s.at("since_best").get<std::size_t>();
    c.stats.mean = j.at("stats").at("mean").get<std::vector<double>>();
    c.stats.std = j.at("stats").at("std").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IncompatibleCheckpoint, std::string("malformed checkpoint: ") + e.what());
  }
  return c;
}

std::string dump_checkpoint(const Checkpoint& c) { return to_json(c).dump() + "\n"; }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) { write_file(path, dump_checkpoint(c)); }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::IncompatibleCheckpoint, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return checkpoint_from_json(j);
}

std::unique_ptr<models::LatentOdeModel> build_model(const RunConfig& c, const models::ModelConfig& m,
                                                    std::size_t features) {
  auto model = std::make_unique<models::LatentOdeModel>(m, features, training::derive_seed(c.seed, "init"));
  model->solver = c.solver;
  return model;
}

void load_parameters(models::LatentOdeModel& model, const Checkpoint& c) {
  const ParameterList params = model.parameters();
  if (params.size() != c.params.size()) {
    throw Error(ErrorCode::IncompatibleCheckpoint, "checkpoint has " + std::to_string(c.params.size()) +
                                                       " parameters, model " + std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    auto it = c.params.find(p->name());
    if (it == c.params.end() || it->second.first != p->shape()) {
      throw Error(ErrorCode::IncompatibleCheckpoint, "checkpoint lacks a matching " + p->name());
    }
    p->assign(it->second.second);
  }
}

training::FitState restore_state(const Checkpoint& c, const ParameterList& params) {
  training::FitState s = c.state;
  s.optimizer.m.clear();
  s.optimizer.u.clear();
  for (const Parameter* p : params) {
    auto it = std::find(c.param_order.begin(), c.param_order.end(), p->name());
    if (it == c.param_order.end()) {
      throw Error(ErrorCode::IncompatibleCheckpoint, "optimizer state lacks " + p->name());
    }
    const auto k = static_cast<std::size_t>(it - c.param_order.begin());
    if (c.state.optimizer.m[k].size() != p->size()) {
      throw Error(ErrorCode::IncompatibleCheckpoint, "optimizer state size differs for " + p->name());
    }
    s.optimizer.m.push_back(c.state.optimizer.m[k]);
    s.optimizer.u.push_back(c.state.optimizer.u[k]);
  }
  return s;
}

std::unique_ptr<models::LatentOdeModel> restore_model(const Checkpoint& c) {
  auto model = build_model(c.config, c.config.model, c.features);
  load_parameters(*model, c);
  return model;
}

}  // namespace tempo::config
