#include "cmr/unet.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

#include "cmr/strict_json.hpp"
#include "cmr/tenfile.hpp"

namespace cmr {

namespace fs = std::filesystem;
using nlohmann::json;

void UNetConfig::validate() const {
  std::vector<std::string> bad;
  if (base_channels < 1) {
    bad.push_back(fmt::format("base_channels must be positive (got {})", base_channels));
  }
  if (depth < 1 || depth > 8) {
    bad.push_back(fmt::format("depth must be in [1, 8] (got {})", depth));
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    bad.push_back(fmt::format("dropout_p must be in [0, 1) (got {})", dropout_p));
  }
  if (input_h < 1 || input_w < 1) {
    bad.push_back(fmt::format("input_size must be positive (got {}x{})", input_h, input_w));
  } else if (depth >= 1 && depth <= 8) {
    const int m = 1 << depth;
    if (input_h % m != 0 || input_w % m != 0) {
      bad.push_back(fmt::format("input_size {}x{} must be divisible by 2^depth = {}", input_h, input_w, m));
    }
  }
  if (bad.empty() && placement == Placement::PerConvAndSkip) {
    // Surface channel-dependent attention constraints (e.g. reduction ratio).
    for (int level = 0; level <= depth; ++level) {
      try {
        attention::make_module(attention, channels(level));
      } catch (const std::invalid_argument& e) {
        bad.push_back(fmt::format("attention at {} channels: {}", channels(level), e.what()));
      }
    }
  }
  if (!bad.empty()) {
    std::string msg = "invalid UNetConfig:";
    for (const auto& b : bad) {
      msg += " " + b + ";";
    }
    msg.pop_back();
    throw std::invalid_argument(msg);
  }
}

std::string placement_name(Placement p) { return p == Placement::None ? "none" : "per_conv_and_skip"; }

Placement parse_placement(const std::string& s) {
  if (s == "none") {
    return Placement::None;
  }
  if (s == "per_conv_and_skip") {
    return Placement::PerConvAndSkip;
  }
  throw std::invalid_argument(fmt::format("unknown placement \"{}\"", s));
}

json UNetConfig::to_json() const {
  return json{{"base_channels", base_channels},
              {"depth", depth},
              {"dropout_p", dropout_p},
              {"attention", {{"kind", attention::kind_name(attention)}, {"settings", attention::kind_to_json(attention)}}},
              {"placement", placement_name(placement)},
              {"input_size", {input_h, input_w}}};
}

UNetConfig UNetConfig::from_json(const json& j) {
  StrictObject o("model", j, {"base_channels", "depth", "dropout_p", "attention", "placement", "input_size"});
  UNetConfig cfg;
  cfg.base_channels = o.get("base_channels", cfg.base_channels);
  cfg.depth = o.get("depth", cfg.depth);
  cfg.dropout_p = o.get("dropout_p", cfg.dropout_p);
  cfg.placement = parse_placement(o.get<std::string>("placement", placement_name(cfg.placement)));
  if (o.has("attention")) {
    const json& a = o.raw("attention");
    if (a.is_string()) {
      cfg.attention = attention::Registry::global().make(a.get<std::string>());
    } else {
      StrictObject ao("model.attention", a, {"kind", "settings"});
      cfg.attention = attention::Registry::global().make(ao.require<std::string>("kind"),
                                                         ao.has("settings") ? ao.raw("settings") : json::object());
    }
  }
  if (o.has("input_size")) {
    const auto size = o.require<std::vector<int>>("input_size");
    if (size.size() != 2) {
      throw std::invalid_argument("model: input_size must be [h, w]");
    }
    cfg.input_h = size[0];
    cfg.input_w = size[1];
  }
  return cfg;
}

// --- layout -------------------------------------------------------------------

namespace {

constexpr int kNoSite = -1;

struct ConvUnit {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int site = kNoSite;
  std::size_t gamma = 0;
  std::size_t beta = 0;
  std::size_t bn = 0;
};

struct ConvBlock {
  ConvUnit first;
  ConvUnit second;
};

struct Site {
  std::unique_ptr<attention::Module> module;
  std::size_t first = 0;
  std::size_t count = 0;
};

} // namespace

struct UNetModel::Layout {
  std::vector<ConvBlock> encoder;
  std::vector<int> skip_sites;
  ConvBlock bridge;
  // Indexed by level.
  std::vector<std::size_t> up_weight;
  std::vector<std::size_t> up_bias;
  std::vector<ConvBlock> decoder;
  std::size_t head_weight = 0;
  std::size_t head_bias = 0;
  std::vector<Site> sites;
  std::vector<int> site_channels;
  std::vector<std::string> bn_names;
  std::vector<ops::BatchNormState> bn;
};

namespace {

class LayoutBuilder {
public:
  LayoutBuilder(const UNetConfig& cfg, std::vector<ParamSpec>& specs, UNetModel::Layout& layout)
      : cfg_(cfg), specs_(specs), layout_(layout) {}

  void build() {
    const int depth = cfg_.depth;
    layout_.encoder.resize(static_cast<std::size_t>(depth));
    layout_.skip_sites.resize(static_cast<std::size_t>(depth));
    layout_.up_weight.resize(static_cast<std::size_t>(depth));
    layout_.up_bias.resize(static_cast<std::size_t>(depth));
    layout_.decoder.resize(static_cast<std::size_t>(depth));

    int in = 1;
    for (int level = 0; level < depth; ++level) {
      const std::string name = fmt::format("enc{}", level);
      const int c = cfg_.channels(level);
      layout_.encoder[static_cast<std::size_t>(level)] = block(name, in, c);
      layout_.skip_sites[static_cast<std::size_t>(level)] = site(name + ".skip_att", c);
      in = c;
    }
    layout_.bridge = block("bridge", in, cfg_.channels(depth));
    for (int level = depth - 1; level >= 0; --level) {
      const std::string name = fmt::format("dec{}", level);
      const int c = cfg_.channels(level);
      const auto lv = static_cast<std::size_t>(level);
      // Transposed-conv weight is (in, out, 2, 2); with stride 2 every
      // output pixel sees one tap per input channel.
      layout_.up_weight[lv] = add({name + ".up.weight", Shape{2 * c, c, 2, 2}, Init::Kaiming, 2 * c});
      layout_.up_bias[lv] = add({name + ".up.bias", Shape{1, c, 1, 1}, Init::Zeros, 1});
      layout_.decoder[lv] = block(name, 2 * c, c);
    }
    const auto head = conv_specs("head", cfg_.base_channels, 1, 1);
    layout_.head_weight = add(head[0]);
    layout_.head_bias = add(head[1]);
  }

private:
  std::size_t add(ParamSpec spec) {
    specs_.push_back(std::move(spec));
    return specs_.size() - 1;
  }

  int site(const std::string& prefix, int channels) {
    if (cfg_.placement == Placement::None || std::holds_alternative<attention::NoneKind>(cfg_.attention)) {
      return kNoSite;
    }
    Site s;
    s.module = attention::make_module(cfg_.attention, channels);
    s.first = specs_.size();
    for (auto spec : s.module->param_specs()) {
      spec.name = prefix + "." + spec.name;
      add(std::move(spec));
    }
    s.count = specs_.size() - s.first;
    layout_.sites.push_back(std::move(s));
    layout_.site_channels.push_back(channels);
    return static_cast<int>(layout_.sites.size() - 1);
  }

  ConvUnit unit(const std::string& prefix, int index, int in, int out) {
    ConvUnit u;
    const auto conv = conv_specs(fmt::format("{}.conv{}", prefix, index), in, out, 3);
    u.weight = add(conv[0]);
    u.bias = add(conv[1]);
    u.site = site(fmt::format("{}.att{}", prefix, index), out);
    const std::string bn = fmt::format("{}.bn{}", prefix, index);
    u.gamma = add({bn + ".weight", Shape{1, out, 1, 1}, Init::Ones, 1});
    u.beta = add({bn + ".bias", Shape{1, out, 1, 1}, Init::Zeros, 1});
    u.bn = layout_.bn.size();
    layout_.bn.push_back(ops::BatchNormState::fresh(out));
    layout_.bn_names.push_back(bn);
    return u;
  }

  ConvBlock block(const std::string& prefix, int in, int out) {
    ConvBlock b;
    b.first = unit(prefix, 1, in, out);
    b.second = unit(prefix, 2, out, out);
    return b;
  }

  const UNetConfig& cfg_;
  std::vector<ParamSpec>& specs_;
  UNetModel::Layout& layout_;
};

std::int64_t total_of(const std::vector<ParamSpec>& specs) {
  std::int64_t n = 0;
  for (const auto& s : specs) {
    n += static_cast<std::int64_t>(s.shape.numel());
  }
  return n;
}

std::int64_t backbone_total(UNetConfig cfg) {
  cfg.attention = attention::NoneKind{};
  cfg.placement = Placement::None;
  std::vector<ParamSpec> specs;
  UNetModel::Layout layout;
  LayoutBuilder(cfg, specs, layout).build();
  return total_of(specs);
}

} // namespace

std::vector<int> attention_sites(const UNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  UNetModel::Layout layout;
  LayoutBuilder(cfg, specs, layout).build();
  return layout.site_channels;
}

ParamCount param_count(const UNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  UNetModel::Layout layout;
  LayoutBuilder(cfg, specs, layout).build();
  ParamCount pc;
  pc.total = total_of(specs);
  pc.attention_overhead = pc.total - backbone_total(cfg);
  return pc;
}

// --- model --------------------------------------------------------------------

UNetModel::UNetModel(UNetConfig cfg) : cfg_(std::move(cfg)), layout_(std::make_unique<Layout>()) {}
UNetModel::UNetModel(UNetModel&&) noexcept = default;
UNetModel& UNetModel::operator=(UNetModel&&) noexcept = default;
UNetModel::~UNetModel() = default;

UNetModel UNetModel::build(const UNetConfig& cfg, const RngStream& rng) {
  cfg.validate();
  UNetModel m(cfg);
  LayoutBuilder(m.cfg_, m.specs_, *m.layout_).build();
  m.params_.reserve(m.specs_.size());
  for (const auto& spec : m.specs_) {
    RngStream r = rng.child(spec.name);
    m.params_.push_back(initialize(spec, r));
  }
  return m;
}

void UNetModel::set_params(std::vector<Tensor> params) {
  if (params.size() != specs_.size()) {
    throw std::invalid_argument(fmt::format("expected {} parameters, got {}", specs_.size(), params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != specs_[i].shape) {
      throw std::invalid_argument(fmt::format("parameter {} has shape {}, expected {}", specs_[i].name,
                                              params[i].shape().str(), specs_[i].shape.str()));
    }
    params[i] = params[i].detach();
  }
  params_ = std::move(params);
}

std::size_t UNetModel::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].name == name) {
      return i;
    }
  }
  throw std::out_of_range(fmt::format("no parameter named \"{}\"", name));
}

Tensor UNetModel::forward(const Tensor& x, Mode mode, RngStream& rng) {
  return forward(x, mode, rng, params_);
}

Tensor UNetModel::forward(const Tensor& x, Mode mode, RngStream& rng, std::span<const Tensor> p) {
  if (p.size() != specs_.size()) {
    throw std::invalid_argument(fmt::format("expected {} parameters, got {}", specs_.size(), p.size()));
  }
  const Shape& s = x.shape();
  if (s.c != 1 || s.h != cfg_.input_h || s.w != cfg_.input_w) {
    throw std::invalid_argument(
        fmt::format("input shape {} does not match (n, 1, {}, {})", s.str(), cfg_.input_h, cfg_.input_w));
  }
  Layout& L = *layout_;

  auto attend = [&](const Tensor& t, int site) {
    if (site == kNoSite) {
      return t;
    }
    const Site& st = L.sites[static_cast<std::size_t>(site)];
    return st.module->forward(t, p.subspan(st.first, st.count));
  };
  auto unit = [&](const Tensor& in, const ConvUnit& u) {
    Tensor h = ops::conv2d(in, p[u.weight], p[u.bias], 1, 1);
    h = attend(h, u.site);
    h = ops::batch_norm2d(h, p[u.gamma], p[u.beta], L.bn[u.bn], mode);
    return ops::relu(h);
  };
  auto block = [&](const Tensor& in, const ConvBlock& b) { return unit(unit(in, b.first), b.second); };

  std::vector<Tensor> skips;
  Tensor h = x;
  for (int level = 0; level < cfg_.depth; ++level) {
    const auto lv = static_cast<std::size_t>(level);
    const Tensor out = block(h, L.encoder[lv]);
    skips.push_back(attend(out, L.skip_sites[lv]));
    h = ops::max_pool2(ops::dropout(out, cfg_.dropout_p, mode, rng));
  }
  h = block(h, L.bridge);
  for (int level = cfg_.depth - 1; level >= 0; --level) {
    const auto lv = static_cast<std::size_t>(level);
    const Tensor up = ops::conv_transpose2d(h, p[L.up_weight[lv]], p[L.up_bias[lv]], 2);
    h = block(ops::concat_channels(up, skips[lv]), L.decoder[lv]);
  }
  return ops::conv2d(h, p[L.head_weight], p[L.head_bias], 1, 0);
}

std::vector<std::pair<std::string, Tensor>> UNetModel::buffers() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < layout_->bn.size(); ++i) {
    const auto& st = layout_->bn[i];
    const int c = static_cast<int>(st.running_mean.size());
    out.emplace_back(layout_->bn_names[i] + ".running_mean", Tensor({1, c, 1, 1}, st.running_mean));
    out.emplace_back(layout_->bn_names[i] + ".running_var", Tensor({1, c, 1, 1}, st.running_var));
  }
  return out;
}

void UNetModel::set_buffer(const std::string& name, const Tensor& value) {
  for (std::size_t i = 0; i < layout_->bn.size(); ++i) {
    auto& st = layout_->bn[i];
    const std::string& bn = layout_->bn_names[i];
    std::vector<double>* target = nullptr;
    if (name == bn + ".running_mean") {
      target = &st.running_mean;
    } else if (name == bn + ".running_var") {
      target = &st.running_var;
    }
    if (target != nullptr) {
      if (value.numel() != target->size()) {
        throw std::invalid_argument(
            fmt::format("buffer {} has {} values, expected {}", name, value.numel(), target->size()));
      }
      target->assign(value.data().begin(), value.data().end());
      st.initialized = true;
      return;
    }
  }
  throw std::out_of_range(fmt::format("no buffer named \"{}\"", name));
}

ParamCount model_param_count(const UNetModel& model) {
  ParamCount pc;
  pc.total = total_of(model.specs());
  pc.attention_overhead = pc.total - backbone_total(model.config());
  return pc;
}

// --- checkpoints ----------------------------------------------------------------

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) {
      return &t;
    }
  }
  return nullptr;
}

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

} // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir / "tensors");
  json entries = json::array();
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& [name, t] = ckpt.tensors[i];
    const std::string file = fmt::format("tensors/{:05d}.ten", i);
    ten::save(dir / file, t);
    entries.push_back({{"name", name}, {"file", file}});
  }
  write_json(dir / "config.json", ckpt.config);
  write_json(dir / "manifest.json", json{{"version", 1}, {"meta", ckpt.meta}, {"tensors", entries}});
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ckpt;
  ckpt.config = read_json(dir / "config.json");
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("version", 0) != 1) {
    throw std::runtime_error(fmt::format("{}: unsupported manifest version", (dir / "manifest.json").string()));
  }
  ckpt.meta = manifest.value("meta", json::object());
  for (const auto& e : manifest.at("tensors")) {
    ckpt.tensors.emplace_back(e.at("name").get<std::string>(), ten::load(dir / e.at("file").get<std::string>()));
  }
  return ckpt;
}

Checkpoint snapshot(const UNetModel& model) {
  Checkpoint ckpt;
  ckpt.config = model.config().to_json();
  for (std::size_t i = 0; i < model.specs().size(); ++i) {
    ckpt.tensors.emplace_back("param/" + model.specs()[i].name, model.params()[i]);
  }
  for (auto& [name, t] : model.buffers()) {
    ckpt.tensors.emplace_back("buffer/" + name, t);
  }
  return ckpt;
}

UNetModel restore(const Checkpoint& ckpt) {
  UNetModel model = UNetModel::build(UNetConfig::from_json(ckpt.config), RngStream(0, "restore"));
  std::vector<Tensor> params;
  for (const auto& spec : model.specs()) {
    const Tensor* t = ckpt.find("param/" + spec.name);
    if (t == nullptr) {
      throw std::runtime_error(fmt::format("checkpoint is missing parameter {}", spec.name));
    }
    params.push_back(*t);
  }
  model.set_params(std::move(params));
  for (const auto& [name, _] : model.buffers()) {
    const Tensor* t = ckpt.find("buffer/" + name);
    if (t == nullptr) {
      throw std::runtime_error(fmt::format("checkpoint is missing buffer {}", name));
    }
    model.set_buffer(name, *t);
  }
  return model;
}

} // namespace cmr
