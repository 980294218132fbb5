#include "pinet/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <variant>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

constexpr char kMagic[8] = {'P', 'I', 'N', 'E', 'T', 'B', 'I', 'N'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes little-endian");

template <typename T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_raw(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("container: truncated file");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

using json = nlohmann::json;

json factors_to_json(const FactorSet& fs, const std::string& prefix, Container& c) {
  json a = json::array();
  for (std::size_t k = 0; k < fs.factors().size(); ++k) {
    const Factor& f = fs.factors()[k];
    const std::string key = prefix + "." + std::to_string(k);
    if (const auto* v = std::get_if<FreeSpace>(&f)) {
      a.push_back({{"type", "free"}, {"dim", v->dim}});
    } else if (const auto* v = std::get_if<BoxSet>(&f)) {
      c.put_vector(key + ".lower", v->lower);
      c.put_vector(key + ".upper", v->upper);
      a.push_back({{"type", "box"}, {"dim", v->lower.size()}, {"key", key}});
    } else if (const auto* v = std::get_if<SecondOrderConeSet>(&f)) {
      a.push_back({{"type", "soc"}, {"dim", v->dim}});
    } else if (const auto* v = std::get_if<SimplexSet>(&f)) {
      a.push_back({{"type", "simplex"}, {"dim", v->dim}, {"radius", v->radius}});
    } else if (const auto* v = std::get_if<L1BallSet>(&f)) {
      a.push_back({{"type", "l1"}, {"dim", v->dim}, {"radius", v->radius}});
    }
  }
  return a;
}

FactorSet factors_from_json(const json& a, const Container& c) {
  FactorSet fs;
  for (const auto& f : a) {
    const std::string type = f.at("type").get<std::string>();
    const std::size_t dim = f.at("dim").get<std::size_t>();
    if (type == "free") {
      fs.append(FreeSpace{dim});
    } else if (type == "box") {
      const std::string key = f.at("key").get<std::string>();
      fs.append(BoxSet{c.vector(key + ".lower"), c.vector(key + ".upper")});
    } else if (type == "soc") {
      fs.append(SecondOrderConeSet{dim});
    } else if (type == "simplex") {
      fs.append(SimplexSet{dim, f.at("radius").get<double>()});
    } else if (type == "l1") {
      fs.append(L1BallSet{dim, f.at("radius").get<double>()});
    } else {
      throw FormatError("container: unknown factor type '" + type + "'");
    }
  }
  return fs;
}

void put_source(Container& c, const LiftedConstraint& lc, const AffineRhs& rhs,
                const std::optional<AffineCompletion>& completion) {
  const auto& s = lc.structure();
  c.put("constraint.eq", s.eq);
  c.put("constraint.aux", s.aux);
  c.put_vector("constraint.b", lc.b());
  c.header["constraint"] = {{"d", lc.d()},
                            {"n", lc.n()},
                            {"k1", factors_to_json(s.k1, "k1", c)},
                            {"k2", factors_to_json(s.k2, "k2", c)}};
  c.put("rhs.r", rhs.r);
  c.put_vector("rhs.b0", rhs.b0);
  c.header["completion"] = static_cast<bool>(completion);
  if (completion) {
    c.put("completion.input_map", completion->input_map);
    c.put("completion.context_map", completion->context_map);
    c.put_vector("completion.bias", completion->bias);
  }
}

LiftedConstraint get_constraint(const Container& c) {
  const json& h = c.header.at("constraint");
  const Vector b = c.vector("constraint.b");
  const Matrix eq = c.matrix("constraint.eq");
  const Matrix aux = c.matrix("constraint.aux");
  return LiftedConstraint::build(eq, b.head(eq.rows()), aux, b.tail(aux.rows()),
                                 factors_from_json(h.at("k1"), c),
                                 factors_from_json(h.at("k2"), c));
}

AffineRhs get_rhs(const Container& c) { return {c.matrix("rhs.r"), c.vector("rhs.b0")}; }

std::optional<AffineCompletion> get_completion(const Container& c) {
  if (!c.header.value("completion", false)) return std::nullopt;
  return AffineCompletion{c.matrix("completion.input_map"), c.matrix("completion.context_map"),
                          c.vector("completion.bias")};
}

json objective_to_json(const ObjectiveSpec& o, Container& c) {
  if (o.q_diag.size()) c.put_vector("objective.q_diag", o.q_diag);
  if (o.q_lin.size()) c.put_vector("objective.q_lin", o.q_lin);
  if (o.context_map.size()) c.put("objective.context_map", o.context_map);
  const auto& t = o.traj;
  return {{"kind", to_string(o.kind)},
          {"constant", o.constant},
          {"traj",
           {{"vehicles", t.vehicles},
            {"horizon", t.horizon},
            {"lambda", t.lambda},
            {"nu", t.nu},
            {"p_min", t.p_min},
            {"p_max", t.p_max},
            {"image_size", t.image_size},
            {"amplitude", t.amplitude},
            {"kernel_sigma", t.kernel_sigma},
            {"p_offset", t.p_offset},
            {"a_offset", t.a_offset}}}};
}

ObjectiveSpec objective_from_json(const json& j, const Container& c) {
  ObjectiveSpec o;
  o.kind = objective_kind_from_string(j.at("kind").get<std::string>());
  o.constant = j.at("constant").get<double>();
  if (c.has("objective.q_diag")) o.q_diag = c.vector("objective.q_diag");
  if (c.has("objective.q_lin")) o.q_lin = c.vector("objective.q_lin");
  if (c.has("objective.context_map")) o.context_map = c.matrix("objective.context_map");
  const json& t = j.at("traj");
  o.traj.vehicles = t.at("vehicles").get<std::size_t>();
  o.traj.horizon = t.at("horizon").get<std::size_t>();
  o.traj.lambda = t.at("lambda").get<double>();
  o.traj.nu = t.at("nu").get<double>();
  o.traj.p_min = t.at("p_min").get<double>();
  o.traj.p_max = t.at("p_max").get<double>();
  o.traj.image_size = t.at("image_size").get<int>();
  o.traj.amplitude = t.at("amplitude").get<double>();
  o.traj.kernel_sigma = t.at("kernel_sigma").get<double>();
  o.traj.p_offset = t.at("p_offset").get<std::size_t>();
  o.traj.a_offset = t.at("a_offset").get<std::size_t>();
  return o;
}

}  // namespace

const RowMatrix& Container::get(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw FormatError("container: missing array '" + name + "'");
  return it->second;
}

Vector Container::vector(const std::string& name) const {
  const RowMatrix& m = get(name);
  if (m.cols() != 1 && m.size() != 0) throw FormatError("container: '" + name + "' is not a vector");
  return Eigen::Map<const Vector>(m.data(), m.size());
}

std::string encode_container(const Container& c) {
  json h = c.header;
  h["kind"] = c.kind;
  json arr = json::object();
  std::size_t offset = 0;
  for (const auto& [name, m] : c.arrays) {
    arr[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}};
    offset += static_cast<std::size_t>(m.size());
  }
  h["arrays"] = arr;
  const std::string text = h.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_raw<std::uint32_t>(out, kContainerVersion);
  put_raw<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, m] : c.arrays) {
    out.append(reinterpret_cast<const char*>(m.data()),
               static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  return out;
}

Container decode_container(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("container: bad magic");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_raw<std::uint32_t>(bytes, pos);
  if (version != kContainerVersion) {
    throw FormatError("container: unsupported version " + std::to_string(version));
  }
  const auto len = get_raw<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw FormatError("container: truncated header");
  Container c;
  try {
    c.header = json::parse(bytes.substr(pos, len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("container: header is not valid JSON: ") + e.what());
  }
  pos += len;
  const std::size_t payload = bytes.size() - pos;
  try {
    c.kind = c.header.at("kind").get<std::string>();
    for (const auto& [name, info] : c.header.at("arrays").items()) {
      const auto rows = info.at("rows").get<Eigen::Index>();
      const auto cols = info.at("cols").get<Eigen::Index>();
      const auto off = info.at("offset").get<std::size_t>();
      const std::size_t count = static_cast<std::size_t>(rows * cols);
      if ((off + count) * sizeof(double) > payload) throw FormatError("container: array out of range");
      RowMatrix m(rows, cols);
      std::memcpy(m.data(), bytes.data() + pos + off * sizeof(double), count * sizeof(double));
      c.arrays[name] = std::move(m);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("container: malformed header: ") + e.what());
  }
  c.header.erase("arrays");
  c.header.erase("kind");
  return c;
}

void write_container(const std::string& path, const Container& c) {
  const std::filesystem::path p(path);
  if (p.has_parent_path() && !std::filesystem::exists(p.parent_path())) {
    throw MissingArtifactError("output directory does not exist: " + p.parent_path().string());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("cannot open for writing: " + path);
  const std::string bytes = encode_container(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Container read_container(const std::string& path, const std::string& expected_kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("file not found: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  Container c = decode_container(ss.str());
  if (!expected_kind.empty() && c.kind != expected_kind) {
    throw FormatError("container: expected a " + expected_kind + " file, found " + c.kind);
  }
  return c;
}

// ---------------------------------------------------------------------------

Container dataset_to_container(const Dataset& ds) {
  Container c;
  c.kind = "dataset";
  c.header["recipe"] = ds.recipe;
  c.header["seed"] = ds.seed;
  c.header["params"] = ds.params;
  c.header["splits"] = {{"train", ds.train}, {"val", ds.val}, {"test", ds.test}};
  c.header["oracle_ok"] = ds.oracle_ok;
  put_source(c, ds.constraint, ds.rhs, ds.completion);
  c.header["objective"] = objective_to_json(ds.objective, c);
  c.put("contexts", ds.contexts);
  if (ds.has_oracle()) {
    c.put("y_star", ds.y_star);
    c.put_vector("j_star", ds.j_star);
  }
  return c;
}

Dataset dataset_from_container(const Container& c) {
  if (c.kind != "dataset") throw FormatError("container: not a dataset");
  Dataset ds;
  try {
    ds.recipe = c.header.at("recipe").get<std::string>();
    ds.seed = c.header.at("seed").get<std::uint64_t>();
    ds.params = c.header.at("params");
    ds.train = c.header.at("splits").at("train").get<std::vector<std::size_t>>();
    ds.val = c.header.at("splits").at("val").get<std::vector<std::size_t>>();
    ds.test = c.header.at("splits").at("test").get<std::vector<std::size_t>>();
    ds.oracle_ok = c.header.at("oracle_ok").get<std::vector<std::uint8_t>>();
    ds.constraint = get_constraint(c);
    ds.rhs = get_rhs(c);
    ds.completion = get_completion(c);
    ds.objective = objective_from_json(c.header.at("objective"), c);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: malformed header: ") + e.what());
  }
  ds.contexts = c.matrix("contexts");
  if (c.has("y_star")) {
    ds.y_star = c.matrix("y_star");
    ds.j_star = c.vector("j_star");
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  write_container(path, dataset_to_container(ds));
}

Dataset load_dataset(const std::string& path) {
  return dataset_from_container(read_container(path, "dataset"));
}

nlohmann::json settings_to_json(const DRSettings& s) {
  return {{"sigma", s.sigma},
          {"omega", s.omega},
          {"n_iter_fwd", s.n_iter_fwd},
          {"n_iter_test", s.n_iter_test},
          {"n_iter_bwd", s.n_iter_bwd}};
}

DRSettings settings_from_json(const nlohmann::json& j) {
  DRSettings s;
  s.sigma = j.at("sigma").get<double>();
  s.omega = j.at("omega").get<double>();
  s.n_iter_fwd = j.at("n_iter_fwd").get<int>();
  s.n_iter_test = j.at("n_iter_test").get<int>();
  s.n_iter_bwd = j.at("n_iter_bwd").get<int>();
  return s;
}

Container model_to_container(const PinetModel& model) {
  Container c;
  c.kind = "model";
  const Backbone& bb = model.backbone();
  const LayerOptions& o = model.options();
  c.header["dims"] = bb.dims;
  c.header["settings"] = settings_to_json(o.settings);
  c.header["krylov"] = {{"tol", o.krylov.tol}};
  c.header["mode"] = to_string(o.mode);
  c.header["equilibrate"] = o.equilibrate;
  c.header["ruiz"] = {{"max_iter", o.ruiz.max_iter},
                      {"tol", o.ruiz.tol},
                      {"mode", o.ruiz.mode == RuizMode::GaussSeidel ? "gauss_seidel" : "jacobi"}};
  c.header["penalty_weight"] = o.penalty_weight;
  c.header["reduce_equalities"] = o.reduce_equalities;
  for (std::size_t k = 0; k < bb.layers(); ++k) {
    c.arrays["layer" + std::to_string(k) + ".weight"] = bb.weights[k];
    c.put_vector("layer" + std::to_string(k) + ".bias", bb.biases[k]);
  }
  if (bb.input_shift.size()) {
    c.put_vector("input.shift", bb.input_shift);
    c.put_vector("input.scale", bb.input_scale);
  }
  put_source(c, model.source().nominal, model.source().rhs, model.completion());
  if (model.scaling()) {
    c.put_vector("scaling.d_r", model.scaling()->d_r);
    c.put_vector("scaling.d_c", model.scaling()->d_c);
  }
  return c;
}

PinetModel model_from_container(const Container& c) {
  if (c.kind != "model") throw FormatError("container: not a model");
  try {
    Backbone bb = Backbone::zeros(c.header.at("dims").get<std::vector<std::size_t>>());
    for (std::size_t k = 0; k < bb.layers(); ++k) {
      const RowMatrix& w = c.get("layer" + std::to_string(k) + ".weight");
      const Vector b = c.vector("layer" + std::to_string(k) + ".bias");
      if (w.rows() != bb.weights[k].rows() || w.cols() != bb.weights[k].cols() ||
          b.size() != bb.biases[k].size()) {
        throw FormatError("model: layer " + std::to_string(k) + " has the wrong shape");
      }
      bb.weights[k] = w;
      bb.biases[k] = b;
    }
    if (c.has("input.shift")) {
      bb.input_shift = c.vector("input.shift");
      bb.input_scale = c.vector("input.scale");
      if (bb.input_shift.size() != static_cast<Eigen::Index>(bb.input_dim()) ||
          bb.input_scale.size() != bb.input_shift.size()) {
        throw FormatError("model: input standardization has the wrong shape");
      }
    }
    LayerOptions o;
    o.settings = settings_from_json(c.header.at("settings"));
    o.krylov.tol = c.header.at("krylov").at("tol").get<double>();
    o.mode = train_mode_from_string(c.header.at("mode").get<std::string>());
    o.equilibrate = c.header.at("equilibrate").get<bool>();
    o.ruiz.max_iter = c.header.at("ruiz").at("max_iter").get<int>();
    o.ruiz.tol = c.header.at("ruiz").at("tol").get<double>();
    o.ruiz.mode = c.header.at("ruiz").at("mode").get<std::string>() == "jacobi" ? RuizMode::Jacobi
                                                                               : RuizMode::GaussSeidel;
    o.penalty_weight = c.header.at("penalty_weight").get<double>();
    o.reduce_equalities = c.header.at("reduce_equalities").get<bool>();
    return PinetModel(std::move(bb), ConstraintSource{get_constraint(c), get_rhs(c)}, o,
                      get_completion(c));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model: malformed header: ") + e.what());
  }
}

void save_model(const std::string& path, const PinetModel& model) {
  write_container(path, model_to_container(model));
}

PinetModel load_model(const std::string& path) {
  return model_from_container(read_container(path, "model"));
}

}  // namespace pinet
