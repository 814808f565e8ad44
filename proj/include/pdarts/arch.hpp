#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdarts/op_catalog.hpp"

namespace pdarts {

enum class CellType { normal, reduce };

std::string_view cell_type_name(CellType t);

/// DAG shape of a cell with B intermediate nodes. Nodes 0 and 1 are the
/// cell inputs, 2..B+1 are intermediates; edge (i, j) exists for every
/// i < j with j intermediate. Edges are numbered by target node, then source.
struct CellSpec {
  int nodes = 4;

  int edge_count() const { return nodes * (nodes + 3) / 2; }
  /// Index of the first edge entering node `to`.
  int first_edge(int to) const {
    const int k = to - 2;
    return k * (k + 3) / 2;
  }
  int edge_index(int from, int to) const;
  std::pair<int, int> edge(int index) const;
  bool operator==(const CellSpec&) const = default;
};

/// Candidate operations per edge for one cell type, each list sorted by
/// canonical index.
struct CellSchema {
  CellSpec spec;
  std::vector<std::vector<OpKind>> candidates;

  static CellSchema full(int nodes);
  static CellSchema uniform(int nodes, std::vector<OpKind> ops);
  /// Throws InvalidArgument on empty, unsorted or duplicated candidate lists.
  void validate() const;
  bool operator==(const CellSchema&) const = default;
};

struct SearchSchema {
  CellSchema normal;
  CellSchema reduce;

  const CellSchema& of(CellType t) const { return t == CellType::normal ? normal : reduce; }
  bool operator==(const SearchSchema&) const = default;
};

/// Architecture parameters of one cell type in double precision, aligned
/// with the schema's candidate lists. An entry of -inf marks a candidate
/// removed by refinement.
struct CellArch {
  CellSchema schema;
  std::vector<std::vector<double>> alpha;

  void validate() const;
  /// Softmax of edge e's alpha; -inf entries get weight 0.
  std::vector<double> weights(int e) const;
};

struct ArchSnapshot {
  CellArch normal;
  CellArch reduce;

  const CellArch& of(CellType t) const { return t == CellType::normal ? normal : reduce; }
  CellArch& of(CellType t) { return t == CellType::normal ? normal : reduce; }
};

std::vector<double> softmax(const std::vector<double>& alpha);

std::string schema_to_json(const SearchSchema& s);
SearchSchema schema_from_json(std::string_view text);

std::string arch_to_json(const ArchSnapshot& a);
ArchSnapshot arch_from_json(std::string_view text);

struct Pick {
  OpKind op;
  int from;
  bool operator==(const Pick&) const = default;
};

/// Discrete cells: two picks per intermediate node for each cell type.
struct Genotype {
  std::vector<std::array<Pick, 2>> normal;
  std::vector<std::array<Pick, 2>> reduce;
  std::vector<int> concat;

  int nodes() const { return static_cast<int>(normal.size()); }
  const std::vector<std::array<Pick, 2>>& of(CellType t) const { return t == CellType::normal ? normal : reduce; }
  /// Throws FormatError naming the first violated rule.
  void validate() const;
  bool operator==(const Genotype&) const = default;
};

std::string genotype_serialize(const Genotype& g);
/// Parses and validates; errors carry the byte offset or the JSON path.
Genotype genotype_parse(std::string_view text);

}  // namespace pdarts
