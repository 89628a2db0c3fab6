#include "msmmt/app/run_config.hpp"

#include <fstream>
#include <set>

namespace msmmt::app {

using nlohmann::json;

namespace {

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw RunConfigError(name_ + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_[key].get<T>();
    } catch (const json::exception&) {
      throw RunConfigError(name_ + "." + key + " has the wrong type");
    }
  }

  json object(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) ? j_[key] : json::object();
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!known_.count(key)) throw RunConfigError("unknown config key: " + name_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> known_;
};

}  // namespace

RunConfig parse_run_config(const json& root) {
  RunConfig c;
  Section top(root, "config");

  const json data_j = top.object("data");
  Section data(data_j, "data");
  data.get("manifest", c.data.manifest);
  data.get("label_map", c.data.label_map);
  data.get("class_names", c.data.class_names);
  {
    const json syn_j = data.object("synthetic");
    Section syn(syn_j, "data.synthetic");
    auto& s = c.data.synthetic;
    syn.get("subjects", s.subjects);
    syn.get("clips_per_class", s.clips_per_class);
    syn.get("classes", s.classes);
    syn.get("image_size", s.image_size);
    syn.get("frames", s.frames);
    syn.get("directions_deg", s.directions_deg);
    syn.get("magnitude", s.magnitude);
    syn.get("window_sigma", s.window_sigma);
    syn.get("noise_std", s.noise_std);
    syn.get("fps", s.fps);
    syn.finish();
  }
  data.finish();

  const json prep_j = top.object("prep");
  Section prep(prep_j, "prep");
  prep.get("align", c.prep.align);
  prep.get("crop_size", c.prep.crop_size);
  {
    const json evm_j = prep.object("evm");
    Section evm(evm_j, "prep.evm");
    evm.get("enabled", c.prep.evm);
    evm.get("alpha", c.prep.evm_options.alpha);
    evm.get("f_lo", c.prep.evm_options.f_lo);
    evm.get("f_hi", c.prep.evm_options.f_hi);
    evm.get("levels", c.prep.evm_options.levels);
    evm.finish();
  }
  {
    const json aug_j = prep.object("augment");
    Section aug(aug_j, "prep.augment");
    aug.get("copies", c.prep.augment_copies);
    aug.get("max_rotation_deg", c.prep.augment.max_rotation_deg);
    aug.get("flip_probability", c.prep.augment.flip_probability);
    aug.get("scale_lo", c.prep.augment.scale_lo);
    aug.get("scale_hi", c.prep.augment.scale_hi);
    aug.finish();
  }
  prep.finish();

  const json dyn_j = top.object("dynimg");
  Section dyn(dyn_j, "dynimg");
  dyn.get("lambda", c.features.dynimg.lambda_reg);
  dyn.get("sqrt_features", c.features.dynimg.sqrt_features);
  dyn.get("iters", c.features.dynimg.solver.iters);
  dyn.get("step", c.features.dynimg.solver.step);
  dyn.finish();

  const json flow_j = top.object("flow");
  Section flow(flow_j, "flow");
  auto& tv = c.features.flow.tvl1;
  flow.get("lambda", tv.lambda);
  flow.get("theta", tv.theta);
  flow.get("tau", tv.tau);
  flow.get("warps", tv.warps);
  flow.get("iterations", tv.iterations);
  flow.get("levels", tv.levels);
  flow.get("zoom_factor", tv.zoom_factor);
  flow.get("presmooth_sigma", tv.presmooth_sigma);
  flow.get("median_filter", tv.median_filter);
  std::string target = "apex";
  flow.get("target", target);
  if (target == "apex") c.features.flow.to_offset = false;
  else if (target == "offset") c.features.flow.to_offset = true;
  else throw RunConfigError("flow.target must be apex or offset");
  flow.finish();

  try {
    c.model = top.object("model").get<model::ModelConfig>();
  } catch (const model::ConfigError& e) {
    throw RunConfigError(e.what());
  } catch (const json::exception&) {
    throw RunConfigError("model has a value of the wrong type");
  }

  const json loss_j = top.object("loss");
  Section loss(loss_j, "loss");
  loss.get("alpha", c.train.alpha);
  loss.get("temperature", c.train.temperature);
  loss.finish();

  const json train_j = top.object("train");
  Section train(train_j, "train");
  train.get("epochs", c.train.epochs);
  train.get("batch_size", c.train.batch_size);
  train.get("learning_rate", c.train.learning_rate);
  train.get("weight_decay", c.train.weight_decay);
  train.get("seed", c.train.seed);
  train.get("workers", c.workers);
  train.finish();

  const json eval_j = top.object("eval");
  Section ev(eval_j, "eval");
  ev.get("alpha_sweep", c.eval.alpha_sweep);
  ev.get("sweep_epochs", c.eval.sweep_epochs);
  ev.finish();

  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw RunConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw RunConfigError("invalid config: " + what); };
  try {
    model.validate();
    data.synthetic.validate();
  } catch (const std::exception& e) {
    throw RunConfigError(e.what());
  }
  if (static_cast<int>(data.class_names.size()) != model.num_classes) {
    fail("data.class_names must have model.num_classes entries");
  }
  if (prep.crop_size < 0 || prep.crop_size == 1) fail("prep.crop_size must be 0 or >= 2");
  if (!(prep.evm_options.alpha >= 0)) fail("prep.evm.alpha must be >= 0");
  if (!(prep.evm_options.f_lo >= 0 && prep.evm_options.f_lo < prep.evm_options.f_hi)) {
    fail("prep.evm needs 0 <= f_lo < f_hi");
  }
  if (prep.evm_options.levels < 1) fail("prep.evm.levels must be >= 1");
  if (prep.augment_copies < 0) fail("prep.augment.copies must be >= 0");
  if (!(prep.augment.flip_probability >= 0 && prep.augment.flip_probability <= 1)) {
    fail("prep.augment.flip_probability must be in [0, 1]");
  }
  if (!(prep.augment.scale_lo > 0 && prep.augment.scale_lo <= prep.augment.scale_hi)) {
    fail("prep.augment needs 0 < scale_lo <= scale_hi");
  }
  if (!(features.dynimg.lambda_reg > 0)) fail("dynimg.lambda must be > 0");
  if (features.dynimg.solver.iters < 1 || !(features.dynimg.solver.step > 0)) fail("dynimg solver settings");
  const auto& tv = features.flow.tvl1;
  if (!(tv.lambda > 0 && tv.theta > 0 && tv.tau > 0)) fail("flow lambda, theta and tau must be > 0");
  if (tv.warps < 1 || tv.iterations < 1 || tv.levels < 1) fail("flow warps, iterations and levels must be >= 1");
  if (!(tv.zoom_factor > 0 && tv.zoom_factor < 1)) fail("flow.zoom_factor must be in (0, 1)");
  if (!(train.alpha >= 0 && train.alpha <= 1)) fail("loss.alpha must be in [0, 1]");
  if (!(train.temperature > 0)) fail("loss.temperature must be > 0");
  if (train.epochs < 1) fail("train.epochs must be >= 1");
  if (train.batch_size < 1) fail("train.batch_size must be >= 1");
  if (!(train.learning_rate > 0)) fail("train.learning_rate must be > 0");
  if (!(train.weight_decay >= 0)) fail("train.weight_decay must be >= 0");
  if (workers < 1) fail("train.workers must be >= 1");
  for (double a : eval.alpha_sweep) {
    if (!(a >= 0 && a <= 1)) fail("eval.alpha_sweep values must be in [0, 1]");
  }
  if (eval.sweep_epochs < 0) fail("eval.sweep_epochs must be >= 0");
}

json RunConfig::to_json() const {
  const auto& s = data.synthetic;
  const auto& tv = features.flow.tvl1;
  json m;
  model::to_json(m, model);
  return {
      {"data",
       {{"manifest", data.manifest},
        {"label_map", data.label_map},
        {"class_names", data.class_names},
        {"synthetic",
         {{"subjects", s.subjects},
          {"clips_per_class", s.clips_per_class},
          {"classes", s.classes},
          {"image_size", s.image_size},
          {"frames", s.frames},
          {"directions_deg", s.directions_deg},
          {"magnitude", s.magnitude},
          {"window_sigma", s.window_sigma},
          {"noise_std", s.noise_std},
          {"fps", s.fps}}}}},
      {"prep",
       {{"align", prep.align},
        {"crop_size", prep.crop_size},
        {"evm",
         {{"enabled", prep.evm},
          {"alpha", prep.evm_options.alpha},
          {"f_lo", prep.evm_options.f_lo},
          {"f_hi", prep.evm_options.f_hi},
          {"levels", prep.evm_options.levels}}},
        {"augment",
         {{"copies", prep.augment_copies},
          {"max_rotation_deg", prep.augment.max_rotation_deg},
          {"flip_probability", prep.augment.flip_probability},
          {"scale_lo", prep.augment.scale_lo},
          {"scale_hi", prep.augment.scale_hi}}}}},
      {"dynimg",
       {{"lambda", features.dynimg.lambda_reg},
        {"sqrt_features", features.dynimg.sqrt_features},
        {"iters", features.dynimg.solver.iters},
        {"step", features.dynimg.solver.step}}},
      {"flow",
       {{"lambda", tv.lambda},
        {"theta", tv.theta},
        {"tau", tv.tau},
        {"warps", tv.warps},
        {"iterations", tv.iterations},
        {"levels", tv.levels},
        {"zoom_factor", tv.zoom_factor},
        {"presmooth_sigma", tv.presmooth_sigma},
        {"median_filter", tv.median_filter},
        {"target", features.flow.to_offset ? "offset" : "apex"}}},
      {"model", m},
      {"loss", {{"alpha", train.alpha}, {"temperature", train.temperature}}},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"learning_rate", train.learning_rate},
        {"weight_decay", train.weight_decay},
        {"seed", train.seed},
        {"workers", workers}}},
      {"eval", {{"alpha_sweep", eval.alpha_sweep}, {"sweep_epochs", eval.sweep_epochs}}}};
}

}  // namespace msmmt::app
