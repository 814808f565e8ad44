#include "pdarts/arch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace pdarts {

using nlohmann::json;

namespace {

// Typed accessors that report the JSON path of the offending value.
const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw FormatError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(path + ": missing field '" + key + "'");
  return *it;
}

int as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw FormatError(path + ": expected an integer");
  return v.get<int>();
}

const json& as_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw FormatError(path + ": expected an array");
  return v;
}

OpKind as_op(const json& v, const std::string& path) {
  if (!v.is_string()) throw FormatError(path + ": expected an operation name");
  auto k = find_op(v.get<std::string>());
  if (!k) throw FormatError(path + ": unknown operation '" + v.get<std::string>() + "'");
  return *k;
}

json parse_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

json alpha_value(double a) {
  if (std::isinf(a) && a < 0) return "-inf";
  return a;
}

double alpha_from(const json& v, const std::string& path) {
  if (v.is_string() && v.get<std::string>() == "-inf") return -std::numeric_limits<double>::infinity();
  if (!v.is_number()) throw FormatError(path + ": expected a number or \"-inf\"");
  return v.get<double>();
}

json edges_json(const CellSchema& s, const std::vector<std::vector<double>>* alpha) {
  json edges = json::array();
  for (int e = 0; e < s.spec.edge_count(); ++e) {
    const auto [from, to] = s.spec.edge(e);
    json ops = json::array();
    for (auto k : s.candidates[static_cast<std::size_t>(e)]) ops.push_back(std::string(op_name(k)));
    json edge = {{"from", from}, {"to", to}, {"ops", ops}};
    if (alpha) {
      json a = json::array();
      for (double v : (*alpha)[static_cast<std::size_t>(e)]) a.push_back(alpha_value(v));
      edge["alpha"] = a;
    }
    edges.push_back(edge);
  }
  return edges;
}

CellSchema schema_from(const json& edges, int nodes, const std::string& path,
                       std::vector<std::vector<double>>* alpha) {
  CellSchema s;
  s.spec.nodes = nodes;
  as_array(edges, path);
  if (static_cast<int>(edges.size()) != s.spec.edge_count()) {
    throw FormatError(path + ": expected " + std::to_string(s.spec.edge_count()) + " edges, found " +
                      std::to_string(edges.size()));
  }
  for (int e = 0; e < s.spec.edge_count(); ++e) {
    const std::string ep = path + "[" + std::to_string(e) + "]";
    const auto& edge = edges[static_cast<std::size_t>(e)];
    const auto [from, to] = s.spec.edge(e);
    if (as_int(field(edge, "from", ep), ep + ".from") != from || as_int(field(edge, "to", ep), ep + ".to") != to) {
      throw FormatError(ep + ": expected edge (" + std::to_string(from) + ", " + std::to_string(to) + ")");
    }
    const auto& ops = as_array(field(edge, "ops", ep), ep + ".ops");
    std::vector<OpKind> cands;
    for (std::size_t i = 0; i < ops.size(); ++i) cands.push_back(as_op(ops[i], ep + ".ops[" + std::to_string(i) + "]"));
    s.candidates.push_back(std::move(cands));
    if (alpha) {
      const auto& a = as_array(field(edge, "alpha", ep), ep + ".alpha");
      std::vector<double> row;
      for (std::size_t i = 0; i < a.size(); ++i) row.push_back(alpha_from(a[i], ep + ".alpha[" + std::to_string(i) + "]"));
      alpha->push_back(std::move(row));
    }
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(path + ": " + e.what());
  }
  return s;
}

}  // namespace

std::string_view cell_type_name(CellType t) { return t == CellType::normal ? "normal" : "reduce"; }

int CellSpec::edge_index(int from, int to) const {
  if (to < 2 || to > nodes + 1 || from < 0 || from >= to) {
    throw InvalidArgument("no edge (" + std::to_string(from) + ", " + std::to_string(to) + ") in a cell with " +
                          std::to_string(nodes) + " intermediate nodes");
  }
  return first_edge(to) + from;
}

std::pair<int, int> CellSpec::edge(int index) const {
  if (index < 0 || index >= edge_count()) throw InvalidArgument("edge index out of range: " + std::to_string(index));
  int to = 2;
  while (first_edge(to + 1) <= index) ++to;
  return {index - first_edge(to), to};
}

CellSchema CellSchema::full(int nodes) { return uniform(nodes, {kAllOps.begin(), kAllOps.end()}); }

CellSchema CellSchema::uniform(int nodes, std::vector<OpKind> ops) {
  if (nodes < 1) throw InvalidArgument("a cell needs at least one intermediate node");
  CellSchema s;
  s.spec.nodes = nodes;
  std::sort(ops.begin(), ops.end());
  s.candidates.assign(static_cast<std::size_t>(s.spec.edge_count()), ops);
  s.validate();
  return s;
}

void CellSchema::validate() const {
  if (spec.nodes < 1) throw InvalidArgument("a cell needs at least one intermediate node");
  if (static_cast<int>(candidates.size()) != spec.edge_count()) {
    throw InvalidArgument("schema lists " + std::to_string(candidates.size()) + " edges, cell has " +
                          std::to_string(spec.edge_count()));
  }
  for (std::size_t e = 0; e < candidates.size(); ++e) {
    const auto& c = candidates[e];
    if (c.empty()) throw InvalidArgument("edge " + std::to_string(e) + " has no candidates");
    for (std::size_t i = 1; i < c.size(); ++i) {
      if (!(c[i - 1] < c[i])) {
        throw InvalidArgument("edge " + std::to_string(e) + " candidates are not strictly increasing by index");
      }
    }
  }
}

void CellArch::validate() const {
  schema.validate();
  if (alpha.size() != schema.candidates.size()) throw InvalidArgument("alpha table does not match schema edges");
  for (std::size_t e = 0; e < alpha.size(); ++e) {
    if (alpha[e].size() != schema.candidates[e].size()) {
      throw InvalidArgument("edge " + std::to_string(e) + " has " + std::to_string(alpha[e].size()) +
                            " alpha entries for " + std::to_string(schema.candidates[e].size()) + " candidates");
    }
    for (double a : alpha[e]) {
      if (std::isnan(a) || (std::isinf(a) && a > 0)) throw InvalidArgument("edge " + std::to_string(e) + " has a non-finite alpha");
    }
  }
}

std::vector<double> softmax(const std::vector<double>& alpha) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : alpha) m = std::max(m, a);
  std::vector<double> w(alpha.size(), 0.0);
  if (!std::isfinite(m)) return w;
  double s = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    w[i] = std::exp(alpha[i] - m);
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

std::vector<double> CellArch::weights(int e) const { return softmax(alpha.at(static_cast<std::size_t>(e))); }

std::string schema_to_json(const SearchSchema& s) {
  json j = {{"nodes", s.normal.spec.nodes},
            {"normal", edges_json(s.normal, nullptr)},
            {"reduce", edges_json(s.reduce, nullptr)}};
  return j.dump(2) + "\n";
}

SearchSchema schema_from_json(std::string_view text) {
  const json j = parse_text(text);
  const int nodes = as_int(field(j, "nodes", "$"), "$.nodes");
  if (nodes < 1) throw FormatError("$.nodes: must be at least 1");
  return {schema_from(field(j, "normal", "$"), nodes, "$.normal", nullptr),
          schema_from(field(j, "reduce", "$"), nodes, "$.reduce", nullptr)};
}

std::string arch_to_json(const ArchSnapshot& a) {
  json j = {{"nodes", a.normal.schema.spec.nodes},
            {"normal", edges_json(a.normal.schema, &a.normal.alpha)},
            {"reduce", edges_json(a.reduce.schema, &a.reduce.alpha)}};
  return j.dump(2) + "\n";
}

ArchSnapshot arch_from_json(std::string_view text) {
  const json j = parse_text(text);
  const int nodes = as_int(field(j, "nodes", "$"), "$.nodes");
  if (nodes < 1) throw FormatError("$.nodes: must be at least 1");
  ArchSnapshot a;
  a.normal.schema = schema_from(field(j, "normal", "$"), nodes, "$.normal", &a.normal.alpha);
  a.reduce.schema = schema_from(field(j, "reduce", "$"), nodes, "$.reduce", &a.reduce.alpha);
  for (auto t : {CellType::normal, CellType::reduce}) {
    try {
      a.of(t).validate();
    } catch (const InvalidArgument& e) {
      throw FormatError("$." + std::string(cell_type_name(t)) + ": " + e.what());
    }
  }
  return a;
}

void Genotype::validate() const {
  if (normal.empty()) throw FormatError("normal: a genotype needs at least one intermediate node");
  if (reduce.size() != normal.size()) {
    throw FormatError("reduce: has " + std::to_string(reduce.size()) + " nodes, normal has " +
                      std::to_string(normal.size()));
  }
  for (auto t : {CellType::normal, CellType::reduce}) {
    const auto& cell = of(t);
    for (std::size_t k = 0; k < cell.size(); ++k) {
      const int node = static_cast<int>(k) + 2;
      const std::string where = std::string(cell_type_name(t)) + "[" + std::to_string(k) + "]";
      for (const auto& p : cell[k]) {
        if (op_index(p.op) < 0 || op_index(p.op) >= kNumOps) throw FormatError(where + ": invalid operation");
        if (p.op == OpKind::zero) throw FormatError(where + ": the zero operation cannot be picked");
        if (p.from < 0 || p.from >= node) {
          throw FormatError(where + ": source " + std::to_string(p.from) + " does not precede node " +
                            std::to_string(node));
        }
      }
      if (cell[k][0].from == cell[k][1].from) throw FormatError(where + ": both picks use source " + std::to_string(cell[k][0].from));
    }
  }
  if (concat.empty()) throw FormatError("concat: must list at least one node");
  for (std::size_t i = 0; i < concat.size(); ++i) {
    if (concat[i] < 2 || concat[i] > nodes() + 1) throw FormatError("concat[" + std::to_string(i) + "]: not an intermediate node");
    if (i > 0 && concat[i] <= concat[i - 1]) throw FormatError("concat[" + std::to_string(i) + "]: entries must increase");
  }
}

std::string genotype_serialize(const Genotype& g) {
  g.validate();
  json j = json::object();
  for (auto t : {CellType::normal, CellType::reduce}) {
    json cell = json::array();
    for (const auto& node : g.of(t)) {
      json picks = json::array();
      for (const auto& p : node) picks.push_back({{"op", std::string(op_name(p.op))}, {"from", p.from}});
      cell.push_back(picks);
    }
    j[std::string(cell_type_name(t))] = cell;
  }
  j["concat"] = g.concat;
  return j.dump(2) + "\n";
}

Genotype genotype_parse(std::string_view text) {
  const json j = parse_text(text);
  if (!j.is_object()) throw FormatError("$: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "normal" && it.key() != "reduce" && it.key() != "concat") {
      throw FormatError("$: unknown field '" + it.key() + "'");
    }
  }
  Genotype g;
  for (auto t : {CellType::normal, CellType::reduce}) {
    const std::string name(cell_type_name(t));
    const auto& cell = as_array(field(j, name.c_str(), "$"), "$." + name);
    auto& out = t == CellType::normal ? g.normal : g.reduce;
    for (std::size_t k = 0; k < cell.size(); ++k) {
      const std::string np = "$." + name + "[" + std::to_string(k) + "]";
      const auto& picks = as_array(cell[k], np);
      if (picks.size() != 2) throw FormatError(np + ": expected exactly 2 picks, found " + std::to_string(picks.size()));
      std::array<Pick, 2> node{};
      for (std::size_t i = 0; i < 2; ++i) {
        const std::string pp = np + "[" + std::to_string(i) + "]";
        node[i] = {as_op(field(picks[i], "op", pp), pp + ".op"), as_int(field(picks[i], "from", pp), pp + ".from")};
      }
      out.push_back(node);
    }
  }
  const auto& concat = as_array(field(j, "concat", "$"), "$.concat");
  for (std::size_t i = 0; i < concat.size(); ++i) g.concat.push_back(as_int(concat[i], "$.concat[" + std::to_string(i) + "]"));
  try {
    g.validate();
  } catch (const FormatError& e) {
    throw FormatError(std::string("$.") + e.what());
  }
  return g;
}

}  // namespace pdarts
