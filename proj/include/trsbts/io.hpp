#pragma once

// Tabular and model I/O. CSV cells use 17 significant digits so doubles
// round-trip exactly; every file is written to a temporary sibling and renamed
// into place. Component configs map to strict JSON objects whose unknown keys
// are rejected by name.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trsbts/descriptor.hpp"
#include "trsbts/generator.hpp"

namespace trsbts {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    fail(Errc::DataError, "csv: missing column '" + name + "'");
  }
};

/// Writes `content` to `path` through a temporary file in the same directory.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::DataError, "cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) fail(Errc::DataError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) os << (c ? "," : "") << cells[c];
    os << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) {
    require(r.size() == t.header.size(), Errc::ShapeMismatch, "csv row width differs from header");
    line(r);
  }
  write_file_atomic(path, os.str());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::DataError, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      t.header = split(line);
      first = false;
    } else {
      auto r = split(line);
      if (r.size() != t.header.size())
        fail(Errc::DataError, path.string() + ": row has " + std::to_string(r.size()) + " cells, header has " +
                                  std::to_string(t.header.size()));
      t.rows.push_back(std::move(r));
    }
  }
  if (first) fail(Errc::DataError, path.string() + ": empty csv");
  return t;
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(Errc::DataError, "not a number: '" + s + "'");
  }
}

inline long long parse_int(const std::string& s) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(Errc::DataError, "not an integer: '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// Paths, descriptors, scores

inline void write_paths(const std::filesystem::path& file, const std::vector<CoarsePath>& paths) {
  CsvTable t;
  const Eigen::Index d = paths.empty() ? 0 : paths.front().dim();
  t.header = {"path_id", "t_index"};
  for (Eigen::Index k = 0; k < d; ++k) t.header.push_back("x" + std::to_string(k));
  for (std::size_t p = 0; p < paths.size(); ++p) {
    for (std::size_t i = 0; i < paths[p].size(); ++i) {
      const Vec& s = paths[p].states[i];
      require(s.size() == d, Errc::ShapeMismatch, "write_paths: dimension differs across states");
      std::vector<std::string> r{std::to_string(p), std::to_string(i)};
      for (Eigen::Index k = 0; k < d; ++k) r.push_back(format_double(s(k)));
      t.rows.push_back(std::move(r));
    }
  }
  write_csv(file, t);
}

/// Reads (path_id, t_index, coords...) rows; ids and indices must be contiguous from 0.
inline std::vector<CoarsePath> read_paths(const std::filesystem::path& file) {
  const CsvTable t = read_csv(file);
  if (t.header.size() < 3 || t.header[0] != "path_id" || t.header[1] != "t_index")
    fail(Errc::DataError, file.string() + ": expected columns path_id,t_index,coords...");
  const std::size_t d = t.header.size() - 2;
  std::vector<CoarsePath> out;
  for (const auto& r : t.rows) {
    const auto pid = parse_int(r[0]);
    const auto ti = parse_int(r[1]);
    if (pid < 0 || pid > static_cast<long long>(out.size()))
      fail(Errc::DataError, file.string() + ": path ids must be contiguous from 0");
    if (pid == static_cast<long long>(out.size())) out.emplace_back();
    auto& p = out[static_cast<std::size_t>(pid)];
    if (ti != static_cast<long long>(p.size()))
      fail(Errc::DataError, file.string() + ": t_index must run 0,1,2,... within each path");
    Vec s(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) {
      s(static_cast<Eigen::Index>(k)) = parse_double(r[2 + k]);
      if (!std::isfinite(s(static_cast<Eigen::Index>(k)))) fail(Errc::DataError, file.string() + ": non-finite value");
    }
    p.states.push_back(std::move(s));
  }
  if (out.empty()) fail(Errc::DataError, file.string() + ": no paths");
  return out;
}

inline void write_descriptors(const std::filesystem::path& file, const std::vector<DescriptorPath>& db) {
  CsvTable t;
  const std::size_t q = db.empty() || db.front().packed.empty() ? 0 : static_cast<std::size_t>(db.front().packed.front().size());
  t.header = {"path_id", "coarse_index"};
  for (std::size_t k = 0; k < q; ++k) t.header.push_back("v" + std::to_string(k));
  for (std::size_t p = 0; p < db.size(); ++p) {
    for (std::size_t i = 0; i < db[p].packed.size(); ++i) {
      std::vector<std::string> r{std::to_string(p), std::to_string(db[p].indices[i])};
      for (Eigen::Index k = 0; k < db[p].packed[i].size(); ++k) r.push_back(format_double(db[p].packed[i](k)));
      t.rows.push_back(std::move(r));
    }
  }
  write_csv(file, t);
}

struct ScoreRow {
  std::string config_id;
  std::string score_name;
  double value = 0.0;
  int n_windows = 0;
  std::uint64_t seed = 0;
};

inline void write_scores(const std::filesystem::path& file, const std::vector<ScoreRow>& rows) {
  CsvTable t;
  t.header = {"config_id", "score_name", "value", "n_windows", "seed"};
  for (const auto& r : rows)
    t.rows.push_back({r.config_id, r.score_name, format_double(r.value), std::to_string(r.n_windows), std::to_string(r.seed)});
  write_csv(file, t);
}

// ---------------------------------------------------------------------------
// Strict JSON reading

/// Reads one JSON object; every key must be consumed or finish() throws a
/// ConfigError naming the first unknown key by its dotted path.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(Errc::ConfigError, where_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.push_back(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  T required(const std::string& key) {
    seen_.push_back(key);
    if (!has(key)) fail(Errc::ConfigError, "missing required key '" + name(key) + "'");
    return convert<T>(key);
  }

  /// Nested object (or nullptr when absent); the key counts as known.
  const Json* child(const std::string& key) {
    seen_.push_back(key);
    return has(key) ? &j_.at(key) : nullptr;
  }

  std::string name(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const auto& s : seen_) ok = ok || s == it.key();
      if (!ok) fail(Errc::ConfigError, "unknown key '" + name(it.key()) + "'");
    }
  }

 private:
  template <class T>
  T convert(const std::string& key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(Errc::ConfigError, "key '" + name(key) + "' has the wrong type");
    }
  }

  const Json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

template <class E>
E parse_enum(const std::string& value, const std::map<std::string, E>& table, const std::string& key) {
  auto it = table.find(value);
  if (it == table.end()) fail(Errc::ConfigError, "key '" + key + "' has invalid value '" + value + "'");
  return it->second;
}

template <class E>
std::string enum_name(E v, const std::map<std::string, E>& table) {
  for (const auto& [k, e] : table)
    if (e == v) return k;
  return "?";
}

inline const std::map<std::string, KernelVariant>& kernel_names() {
  static const std::map<std::string, KernelVariant> m{{"gaussian", KernelVariant::gaussian},
                                                      {"quartic", KernelVariant::quartic_compact},
                                                      {"truncated_gaussian", KernelVariant::truncated_gaussian}};
  return m;
}
inline const std::map<std::string, ConditioningMode>& mode_names() {
  static const std::map<std::string, ConditioningMode> m{{"projected", ConditioningMode::projected},
                                                         {"reference_aware", ConditioningMode::reference_aware}};
  return m;
}
inline const std::map<std::string, AnchorMetric>& metric_names() {
  static const std::map<std::string, AnchorMetric> m{{"isotropic", AnchorMetric::isotropic},
                                                     {"reference", AnchorMetric::reference}};
  return m;
}
inline const std::map<std::string, PcrNormalization>& pcrnorm_names() {
  static const std::map<std::string, PcrNormalization> m{{"joint", PcrNormalization::joint},
                                                         {"blockwise", PcrNormalization::blockwise},
                                                         {"componentwise", PcrNormalization::componentwise}};
  return m;
}
inline const std::map<std::string, WlsModel>& wls_names() {
  static const std::map<std::string, WlsModel> m{{"none", WlsModel::none},
                                                 {"locally_constant", WlsModel::locally_constant},
                                                 {"linear_in_time", WlsModel::linear_in_time}};
  return m;
}
inline const std::map<std::string, ReferenceKind>& refkind_names() {
  static const std::map<std::string, ReferenceKind> m{{"identity", ReferenceKind::identity},
                                                      {"isotropic", ReferenceKind::isotropic},
                                                      {"empirical", ReferenceKind::empirical}};
  return m;
}

inline Json component_config_to_json(const ComponentConfig& c) {
  Json j;
  j["p_max"] = c.p_max;
  j["dt"] = c.dt;
  j["mode"] = enum_name(c.mode, mode_names());
  j["kernel"] = {{"variant", enum_name(c.kernel.variant, kernel_names())},
                 {"bandwidth", c.kernel.bandwidth},
                 {"truncation_radius", c.kernel.truncation_radius}};
  j["distance"] = {{"anchor_metric", enum_name(c.distance.anchor_metric, metric_names())},
                   {"anchor_scale", c.distance.anchor_scale},
                   {"use_increments", c.distance.use_increments},
                   {"latent_scale", c.distance.latent_scale},
                   {"theta_scale", c.distance.theta_scale},
                   {"ref_weight", c.distance.ref_weight}};
  j["increment_scale"] = c.increment_scale;
  j["use_pcr"] = c.use_pcr;
  j["pcr_threshold"] = c.pcr_threshold;
  j["pcr_normalization"] = enum_name(c.pcr_normalization, pcrnorm_names());
  j["wls_model"] = enum_name(c.wls_model, wls_names());
  j["wls_window"] = c.wls_window;
  j["use_latent"] = c.use_latent;
  Json b = {{"n_inner", c.bridge.n_inner}, {"epsilon", c.bridge.epsilon}, {"noise", c.bridge.noise}};
  b["drift_clip"] = c.bridge.drift_clip ? Json(*c.bridge.drift_clip) : Json(nullptr);
  j["bridge"] = b;
  j["reference"] = enum_name(c.reference, refkind_names());
  j["reference_scale"] = c.reference_scale;
  j["fallback_neighbors"] = c.fallback_neighbors;
  return j;
}

/// Fills `c` from `j`; absent keys keep their current values.
inline ComponentConfig component_config_from_json(const Json& j, const std::string& where,
                                                  ComponentConfig c = {}) {
  ObjectReader r(j, where);
  c.p_max = r.get("p_max", c.p_max);
  c.dt = r.get("dt", c.dt);
  if (r.has("mode")) c.mode = parse_enum(r.get<std::string>("mode", ""), mode_names(), r.name("mode"));
  else (void)r.child("mode");
  if (const Json* k = r.child("kernel")) {
    ObjectReader kr(*k, r.name("kernel"));
    if (kr.has("variant"))
      c.kernel.variant = parse_enum(kr.get<std::string>("variant", ""), kernel_names(), kr.name("variant"));
    else (void)kr.child("variant");
    c.kernel.bandwidth = kr.get("bandwidth", c.kernel.bandwidth);
    c.kernel.truncation_radius = kr.get("truncation_radius", c.kernel.truncation_radius);
    kr.finish();
  }
  if (const Json* d = r.child("distance")) {
    ObjectReader dr(*d, r.name("distance"));
    if (dr.has("anchor_metric"))
      c.distance.anchor_metric =
          parse_enum(dr.get<std::string>("anchor_metric", ""), metric_names(), dr.name("anchor_metric"));
    else (void)dr.child("anchor_metric");
    c.distance.anchor_scale = dr.get("anchor_scale", c.distance.anchor_scale);
    c.distance.use_increments = dr.get("use_increments", c.distance.use_increments);
    c.distance.latent_scale = dr.get("latent_scale", c.distance.latent_scale);
    c.distance.theta_scale = dr.get("theta_scale", c.distance.theta_scale);
    c.distance.ref_weight = dr.get("ref_weight", c.distance.ref_weight);
    dr.finish();
  }
  c.increment_scale = r.get("increment_scale", c.increment_scale);
  c.use_pcr = r.get("use_pcr", c.use_pcr);
  c.pcr_threshold = r.get("pcr_threshold", c.pcr_threshold);
  if (r.has("pcr_normalization"))
    c.pcr_normalization =
        parse_enum(r.get<std::string>("pcr_normalization", ""), pcrnorm_names(), r.name("pcr_normalization"));
  else (void)r.child("pcr_normalization");
  if (r.has("wls_model")) c.wls_model = parse_enum(r.get<std::string>("wls_model", ""), wls_names(), r.name("wls_model"));
  else (void)r.child("wls_model");
  c.wls_window = r.get("wls_window", c.wls_window);
  c.use_latent = r.get("use_latent", c.use_latent);
  if (const Json* b = r.child("bridge")) {
    ObjectReader br(*b, r.name("bridge"));
    c.bridge.n_inner = br.get("n_inner", c.bridge.n_inner);
    c.bridge.epsilon = br.get("epsilon", c.bridge.epsilon);
    c.bridge.noise = br.get("noise", c.bridge.noise);
    if (br.has("drift_clip")) c.bridge.drift_clip = br.get("drift_clip", 0.0);
    else (void)br.child("drift_clip");
    br.finish();
  }
  if (r.has("reference"))
    c.reference = parse_enum(r.get<std::string>("reference", ""), refkind_names(), r.name("reference"));
  else (void)r.child("reference");
  c.reference_scale = r.get("reference_scale", c.reference_scale);
  c.fallback_neighbors = r.get("fallback_neighbors", c.fallback_neighbors);
  r.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(Errc::ConfigError, where + ": " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Model directory

namespace detail {

inline Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vec json_vec(const Json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

inline Json reducer_json(const std::optional<PcrReducer>& r) {
  if (!r) return nullptr;
  Json comps = Json::array();
  for (Eigen::Index k = 0; k < r->rank(); ++k) comps.push_back(vec_json(r->components.row(k).transpose()));
  return {{"mean", vec_json(r->mean)},
          {"components", comps},
          {"scales", vec_json(r->scales)},
          {"explained_threshold", r->explained_threshold},
          {"normalization", enum_name(r->normalization, pcrnorm_names())}};
}

inline std::optional<PcrReducer> json_reducer(const Json& j) {
  if (j.is_null()) return std::nullopt;
  PcrReducer r;
  r.mean = json_vec(j.at("mean"));
  const auto& comps = j.at("components");
  r.components.resize(static_cast<Eigen::Index>(comps.size()), r.mean.size());
  for (std::size_t k = 0; k < comps.size(); ++k) r.components.row(static_cast<Eigen::Index>(k)) = json_vec(comps[k]).transpose();
  r.scales = json_vec(j.at("scales"));
  r.explained_threshold = j.at("explained_threshold").get<double>();
  r.normalization = parse_enum(j.at("normalization").get<std::string>(), pcrnorm_names(), "normalization");
  return r;
}

}  // namespace detail

/// Writes `<dir>/<name>_atoms.csv`, `<dir>/<name>_summaries.csv` and returns
/// the manifest entry for the component.
inline Json save_component(const std::filesystem::path& dir, const std::string& name, const FittedComponent& fc) {
  const Eigen::Index d = fc.dim;
  const Eigen::Index M = fc.size();
  CsvTable atoms;
  atoms.header = {"source_path", "source_index"};
  for (Eigen::Index k = 0; k < d; ++k) atoms.header.push_back("a" + std::to_string(k));
  for (Eigen::Index j = 0; j < M; ++j) {
    const auto& s = fc.sources[static_cast<std::size_t>(j)];
    std::vector<std::string> r{std::to_string(s.path), std::to_string(s.index)};
    for (Eigen::Index k = 0; k < d; ++k) r.push_back(format_double(fc.atoms(k, j)));
    atoms.rows.push_back(std::move(r));
  }

  const auto& s0 = fc.summaries.front();
  const std::size_t p = s0.past_increments.size();
  const Eigen::Index ql = s0.latent.size(), qt = s0.wls_theta.size();
  const bool cums = !s0.frozen_cumulants.empty();
  CsvTable sm;
  sm.header = {"source_path", "source_index"};
  for (Eigen::Index k = 0; k < d; ++k) sm.header.push_back("anchor" + std::to_string(k));
  for (std::size_t b = 0; b < p; ++b)
    for (Eigen::Index k = 0; k < d; ++k) sm.header.push_back("inc" + std::to_string(b) + "_" + std::to_string(k));
  for (Eigen::Index k = 0; k < ql; ++k) sm.header.push_back("latent" + std::to_string(k));
  for (Eigen::Index k = 0; k < qt; ++k) sm.header.push_back("theta" + std::to_string(k));
  if (cums) {
    for (std::size_t b = 0; b < p; ++b) {
      for (Eigen::Index k = 0; k < vech_size(d); ++k)
        sm.header.push_back("cum" + std::to_string(b) + "_v" + std::to_string(k));
      sm.header.push_back("cum" + std::to_string(b) + "_eps");
    }
  }
  for (Eigen::Index j = 0; j < M; ++j) {
    const auto& s = fc.summaries[static_cast<std::size_t>(j)];
    require(s.past_increments.size() == p && s.latent.size() == ql && s.wls_theta.size() == qt,
            Errc::ShapeMismatch, "save_component: summaries must share one layout");
    std::vector<std::string> r{std::to_string(fc.sources[static_cast<std::size_t>(j)].path),
                               std::to_string(fc.sources[static_cast<std::size_t>(j)].index)};
    auto put = [&](const Vec& v) {
      for (Eigen::Index k = 0; k < v.size(); ++k) r.push_back(format_double(v(k)));
    };
    put(s.anchor);
    for (const auto& v : s.past_increments) put(v);
    put(s.latent);
    put(s.wls_theta);
    if (cums) {
      for (const auto& c : s.frozen_cumulants) {
        put(vech(c.base()));
        r.push_back(format_double(c.epsilon()));
      }
    }
    sm.rows.push_back(std::move(r));
  }
  write_csv(dir / (name + "_atoms.csv"), atoms);
  write_csv(dir / (name + "_summaries.csv"), sm);

  Json j;
  j["name"] = name;
  j["config"] = component_config_to_json(fc.config);
  j["dim"] = d;
  j["n_atoms"] = M;
  j["n_increments"] = p;
  j["latent_dim"] = ql;
  j["theta_dim"] = qt;
  j["has_cumulants"] = cums;
  j["reduce_x"] = detail::reducer_json(fc.reduce_x);
  j["reduce_delta"] = detail::reducer_json(fc.reduce_delta);
  j["frozen_reference"] = {{"base", detail::vec_json(vech(fc.frozen_reference.base()))},
                           {"epsilon", fc.frozen_reference.epsilon()}};
  j["sigma_pos"] = fc.sigma_pos;
  j["sigma_inc"] = fc.sigma_inc;
  j["atoms_file"] = name + "_atoms.csv";
  j["summaries_file"] = name + "_summaries.csv";
  return j;
}

inline FittedComponent load_component(const std::filesystem::path& dir, const Json& j) {
  try {
    FittedComponent fc;
    fc.config = component_config_from_json(j.at("config"), "config");
    fc.dim = j.at("dim").get<Eigen::Index>();
    const auto M = j.at("n_atoms").get<std::size_t>();
    const auto p = j.at("n_increments").get<std::size_t>();
    const auto ql = j.at("latent_dim").get<Eigen::Index>();
    const auto qt = j.at("theta_dim").get<Eigen::Index>();
    const bool cums = j.at("has_cumulants").get<bool>();
    fc.reduce_x = detail::json_reducer(j.at("reduce_x"));
    fc.reduce_delta = detail::json_reducer(j.at("reduce_delta"));
    fc.frozen_reference = FlooredPsd(unvech(detail::json_vec(j.at("frozen_reference").at("base"))),
                                     j.at("frozen_reference").at("epsilon").get<double>());
    fc.sigma_pos = j.at("sigma_pos").get<double>();
    fc.sigma_inc = j.at("sigma_inc").get<double>();

    const Eigen::Index d = fc.dim;
    const CsvTable atoms = read_csv(dir / j.at("atoms_file").get<std::string>());
    const CsvTable sm = read_csv(dir / j.at("summaries_file").get<std::string>());
    if (atoms.rows.size() != M || sm.rows.size() != M) fail(Errc::DataError, "model dir: atom count mismatch");
    fc.atoms.resize(d, static_cast<Eigen::Index>(M));
    for (std::size_t m = 0; m < M; ++m) {
      const auto& r = atoms.rows[m];
      if (r.size() != static_cast<std::size_t>(2 + d)) fail(Errc::DataError, "model dir: atom row width");
      fc.sources.push_back({static_cast<int>(parse_int(r[0])), static_cast<int>(parse_int(r[1]))});
      for (Eigen::Index k = 0; k < d; ++k) fc.atoms(k, static_cast<Eigen::Index>(m)) = parse_double(r[static_cast<std::size_t>(2 + k)]);

      const auto& s = sm.rows[m];
      std::size_t c = 2;
      auto take = [&](Eigen::Index n) {
        Vec v(n);
        for (Eigen::Index k = 0; k < n; ++k) v(k) = parse_double(s.at(c++));
        return v;
      };
      ConditioningSummary q;
      q.anchor = take(d);
      for (std::size_t b = 0; b < p; ++b) q.past_increments.push_back(take(d));
      q.latent = take(ql);
      q.wls_theta = take(qt);
      if (cums) {
        for (std::size_t b = 0; b < p; ++b) {
          const Vec v = take(vech_size(d));
          const double eps = parse_double(s.at(c++));
          q.frozen_cumulants.emplace_back(unvech(v), eps);
        }
      }
      fc.summaries.push_back(std::move(q));
    }
    fc.prepare();
    return fc;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::DataError, std::string("model manifest: ") + e.what());
  }
}

}  // namespace trsbts
