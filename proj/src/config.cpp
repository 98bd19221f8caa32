#include "corl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace corl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key, "cannot parse '" + v + "' as a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Proj>
Field int_field(const std::string& key, Proj proj) {
  return {[key, proj](RunConfig& c, const std::string& v) { proj(c) = parse_number<Index>(key, v); },
          [proj](const RunConfig& c) { return std::to_string(proj(const_cast<RunConfig&>(c))); }};
}

template <typename Proj>
Field real_field(const std::string& key, Proj proj) {
  return {[key, proj](RunConfig& c, const std::string& v) { proj(c) = parse_number<double>(key, v); },
          [proj](const RunConfig& c) { return format_double(proj(const_cast<RunConfig&>(c))); }};
}

template <typename Proj>
Field bool_field(const std::string& key, Proj proj) {
  return {[key, proj](RunConfig& c, const std::string& v) { proj(c) = parse_bool(key, v); },
          [proj](const RunConfig& c) { return std::string(proj(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Proj>
Field string_field(Proj proj) {
  return {[proj](RunConfig& c, const std::string& v) { proj(c) = v; },
          [proj](const RunConfig& c) { return proj(const_cast<RunConfig&>(c)); }};
}

// Ordered as written by format_config.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&](const std::string& k, Field f) { t.emplace_back(k, std::move(f)); };
    add("dataset", string_field([](RunConfig& c) -> std::string& { return c.dataset; }));
    add("out", string_field([](RunConfig& c) -> std::string& { return c.out; }));
    add("input_height", int_field("input_height", [](RunConfig& c) -> Index& { return c.model.backbone.input_height; }));
    add("input_width", int_field("input_width", [](RunConfig& c) -> Index& { return c.model.backbone.input_width; }));
    add("input_channels", int_field("input_channels", [](RunConfig& c) -> Index& { return c.model.backbone.input_channels; }));
    add("stage_channels",
        {[](RunConfig& c, const std::string& v) {
           std::vector<Index> out;
           std::stringstream ss(v);
           std::string item;
           while (std::getline(ss, item, ',')) out.push_back(parse_number<Index>("stage_channels", trim(item)));
           c.model.backbone.stage_channels = std::move(out);
         },
         [](const RunConfig& c) {
           std::string s;
           for (std::size_t i = 0; i < c.model.backbone.stage_channels.size(); ++i) {
             s += (i ? "," : "") + std::to_string(c.model.backbone.stage_channels[i]);
           }
           return s;
         }});
    add("convs_per_stage", int_field("convs_per_stage", [](RunConfig& c) -> Index& { return c.model.backbone.convs_per_stage; }));
    add("use_dropout", bool_field("use_dropout", [](RunConfig& c) -> bool& { return c.model.backbone.use_dropout; }));
    add("dropout_rate", real_field("dropout_rate", [](RunConfig& c) -> double& { return c.model.backbone.dropout_rate; }));
    add("dict_size", int_field("dict_size", [](RunConfig& c) -> Index& { return c.model.dict_size; }));
    add("map_size", int_field("map_size", [](RunConfig& c) -> Index& { return c.model.map_size; }));
    add("reduction", int_field("reduction", [](RunConfig& c) -> Index& { return c.model.reduction; }));
    add("hidden", int_field("hidden", [](RunConfig& c) -> Index& { return c.model.hidden; }));
    add("num_classes", int_field("num_classes", [](RunConfig& c) -> Index& { return c.model.num_classes; }));
    add("use_map_dictionary", bool_field("use_map_dictionary", [](RunConfig& c) -> bool& { return c.model.ablation.use_map_dictionary; }));
    add("use_attention", bool_field("use_attention", [](RunConfig& c) -> bool& { return c.model.ablation.use_attention; }));
    add("use_cluster_loss", bool_field("use_cluster_loss", [](RunConfig& c) -> bool& { return c.model.ablation.use_cluster_loss; }));
    add("use_sparse_loss", bool_field("use_sparse_loss", [](RunConfig& c) -> bool& { return c.model.ablation.use_sparse_loss; }));
    add("gamma1", real_field("gamma1", [](RunConfig& c) -> double& { return c.train.gamma1; }));
    add("gamma2", real_field("gamma2", [](RunConfig& c) -> double& { return c.train.gamma2; }));
    add("base_lr", real_field("base_lr", [](RunConfig& c) -> double& { return c.train.base_lr; }));
    add("momentum", real_field("momentum", [](RunConfig& c) -> double& { return c.train.momentum; }));
    add("weight_decay", real_field("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    add("batch_size", int_field("batch_size", [](RunConfig& c) -> Index& { return c.train.batch_size; }));
    add("epochs", int_field("epochs", [](RunConfig& c) -> Index& { return c.train.epochs; }));
    add("seed", {[](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    add("flip_augment", bool_field("flip_augment", [](RunConfig& c) -> bool& { return c.train.flip_augment; }));
    add("kmeans_sample", int_field("kmeans_sample", [](RunConfig& c) -> Index& { return c.train.kmeans_sample; }));
    add("kmeans_iters", int_field("kmeans_iters", [](RunConfig& c) -> Index& { return c.train.kmeans_iters; }));
    add("val_tasks", int_field("val_tasks", [](RunConfig& c) -> Index& { return c.train.val_tasks; }));
    add("val_way", int_field("val_way", [](RunConfig& c) -> Index& { return c.train.val_way; }));
    add("val_shot", int_field("val_shot", [](RunConfig& c) -> Index& { return c.train.val_shot; }));
    add("val_queries", int_field("val_queries", [](RunConfig& c) -> Index& { return c.train.val_queries; }));
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InputError& e) {
    throw ConfigError("model", e.what());
  }
  train.validate();
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Calls visit(key, value) for every assignment, rejecting malformed lines and repeated keys.
void for_each_assignment(std::string_view text, const std::function<void(const std::string&, const std::string&)>& visit) {
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no), "expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(key, "given more than once");
    visit(key, trim(std::string_view(body).substr(eq + 1)));
  }
}

struct SynthField {
  std::function<void(SynthSpec&, const std::string&)> set;
  std::function<std::string(const SynthSpec&)> get;
};

const std::vector<std::pair<std::string, SynthField>>& synth_fields() {
  static const std::vector<std::pair<std::string, SynthField>> table = [] {
    std::vector<std::pair<std::string, SynthField>> t;
    auto integer = [&](const std::string& k, Index SynthSpec::*m) {
      t.emplace_back(k, SynthField{[k, m](SynthSpec& s, const std::string& v) { s.*m = parse_number<Index>(k, v); },
                                   [m](const SynthSpec& s) { return std::to_string(s.*m); }});
    };
    integer("part_pool", &SynthSpec::part_pool);
    integer("parts_per_class", &SynthSpec::parts_per_class);
    integer("train_classes", &SynthSpec::train_classes);
    integer("val_classes", &SynthSpec::val_classes);
    integer("test_classes", &SynthSpec::test_classes);
    integer("images_per_class", &SynthSpec::images_per_class);
    integer("height", &SynthSpec::height);
    integer("width", &SynthSpec::width);
    integer("channels", &SynthSpec::channels);
    integer("glyph_size", &SynthSpec::glyph_size);
    integer("jitter", &SynthSpec::jitter);
    t.emplace_back("noise", SynthField{[](SynthSpec& s, const std::string& v) { s.noise = parse_number<double>("noise", v); },
                                       [](const SynthSpec& s) { return format_double(s.noise); }});
    t.emplace_back("seed", SynthField{[](SynthSpec& s, const std::string& v) { s.seed = parse_number<std::uint64_t>("seed", v); },
                                      [](const SynthSpec& s) { return std::to_string(s.seed); }});
    return t;
  }();
  return table;
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  static const std::map<std::string, const Field*> lookup = [] {
    std::map<std::string, const Field*> m;
    for (const auto& [k, f] : fields()) m.emplace(k, &f);
    return m;
  }();
  RunConfig cfg;
  for_each_assignment(text, [&](const std::string& key, const std::string& value) {
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw ConfigError(key, "unknown key");
    it->second->set(cfg, value);
  });
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(slurp(path)); }

SynthSpec parse_synth_spec(std::string_view text) {
  SynthSpec spec;
  for_each_assignment(text, [&](const std::string& key, const std::string& value) {
    const auto& table = synth_fields();
    const auto it = std::ranges::find_if(table, [&](const auto& kv) { return kv.first == key; });
    if (it == table.end()) throw ConfigError(key, "unknown key");
    it->second.set(spec, value);
  });
  try {
    spec.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InputError& e) {
    throw ConfigError("spec", e.what());
  }
  return spec;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) { return parse_synth_spec(slurp(path)); }

std::string format_synth_spec(const SynthSpec& spec) {
  std::string out;
  for (const auto& [key, f] : synth_fields()) out += key + " = " + f.get(spec) + "\n";
  return out;
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace corl
