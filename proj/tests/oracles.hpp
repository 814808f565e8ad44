#pragma once

// Independent reference implementations used to freeze expected values.

#include <algorithm>
#include <bit>
#include <stdexcept>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pdarts/arch.hpp"
#include "pdarts/rng.hpp"

namespace oracle {

using pdarts::CellArch;
using pdarts::OpKind;
using pdarts::Pick;
using Picks = std::vector<std::array<Pick, 2>>;

inline std::vector<double> softmax(const std::vector<double>& a) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : a) m = std::max(m, v);
  std::vector<double> w(a.size(), 0.0);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (w[i] = std::isinf(a[i]) ? 0.0 : std::exp(a[i] - m));
  for (double& v : w) v /= s;
  return w;
}

/// Exhaustive derivation: for every node, every pair of distinct incoming
/// edges and every eligible non-zero operation on each, keep the selection
/// with the largest total weight. Exact ties prefer lower sources, then lower
/// operations. Picks are listed heavier first.
inline Picks derive_by_enumeration(const CellArch& arch) {
  const auto& spec = arch.schema.spec;
  Picks out;
  for (int to = 2; to <= spec.nodes + 1; ++to) {
    struct Option {
      int from;
      OpKind op;
      double w;
    };
    std::vector<Option> opts;
    for (int from = 0; from < to; ++from) {
      const int e = spec.first_edge(to) + from;
      const auto w = softmax(arch.alpha[e]);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const auto op = arch.schema.candidates[e][i];
        if (op == OpKind::zero || std::isinf(arch.alpha[e][i])) continue;
        opts.push_back({from, op, w[i]});
      }
    }
    std::optional<std::pair<Option, Option>> best;
    double best_total = -1;
    for (std::size_t a = 0; a < opts.size(); ++a) {
      for (std::size_t b = 0; b < opts.size(); ++b) {
        if (opts[a].from >= opts[b].from) continue;
        const double total = opts[a].w + opts[b].w;
        // Strictly better only; enumeration order already favours lower sources and ops.
        if (total > best_total) {
          best_total = total;
          best = {opts[a], opts[b]};
        }
      }
    }
    if (!best) throw std::runtime_error("oracle: node without two eligible edges");
    auto [x, y] = *best;
    if (y.w > x.w) std::swap(x, y);
    out.push_back({Pick{x.op, x.from}, Pick{y.op, y.from}});
  }
  return out;
}

inline int skips(const Picks& p) {
  int n = 0;
  for (const auto& node : p)
    for (const auto& k : node) n += k.op == OpKind::skip_connect;
  return n;
}

/// Suppression-subset search over the skip candidates of a cell. A set S is
/// admissible when
///   - every member of S is a skip that derivation selects once some proper
///     subset of S has been removed (only selected skips are ever removed),
///   - removing S leaves exactly M selected skips (S is empty when the cell
///     already has at most M),
///   - no removed skip outweighs a surviving selected skip.
/// Returns the smallest admissible |S| and the distinct cells derived from
/// admissible sets of that size.
struct SuppressionResult {
  int min_size = 0;
  std::vector<Picks> outcomes;

  bool admits(const Picks& p) const { return std::find(outcomes.begin(), outcomes.end(), p) != outcomes.end(); }
};

inline SuppressionResult refine_by_suppression(const CellArch& arch, int m) {
  const Picks base = derive_by_enumeration(arch);
  if (skips(base) <= m) return {0, {base}};
  std::vector<std::pair<int, int>> slots;  // (edge, slot) of every skip candidate
  for (std::size_t e = 0; e < arch.schema.candidates.size(); ++e) {
    const auto& c = arch.schema.candidates[e];
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c[i] == OpKind::skip_connect && !std::isinf(arch.alpha[e][i])) {
        slots.emplace_back(static_cast<int>(e), static_cast<int>(i));
      }
    }
  }
  const std::size_t n = slots.size();
  const std::uint64_t count = std::uint64_t{1} << n;
  std::vector<std::optional<Picks>> derived(count);
  std::vector<std::uint64_t> selected(count, 0);  // skip slots selected by g_S
  std::vector<double> weight(n);
  for (std::size_t b = 0; b < n; ++b) weight[b] = softmax(arch.alpha[slots[b].first])[slots[b].second];
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    CellArch trial = arch;
    for (std::size_t b = 0; b < n; ++b) {
      if (mask >> b & 1) trial.alpha[slots[b].first][slots[b].second] = -std::numeric_limits<double>::infinity();
    }
    try {
      derived[mask] = derive_by_enumeration(trial);
    } catch (const std::runtime_error&) {
      continue;
    }
    for (std::size_t k = 0; k < derived[mask]->size(); ++k) {
      for (const auto& pick : (*derived[mask])[k]) {
        if (pick.op != OpKind::skip_connect) continue;
        const int e = arch.schema.spec.first_edge(static_cast<int>(k) + 2) + pick.from;
        for (std::size_t b = 0; b < n; ++b) {
          if (slots[b].first == e) selected[mask] |= std::uint64_t{1} << b;
        }
      }
    }
  }
  SuppressionResult best{std::numeric_limits<int>::max(), {}};
  for (std::uint64_t mask = 1; mask < count; ++mask) {
    const int size = std::popcount(mask);
    if (size > best.min_size || !derived[mask] || skips(*derived[mask]) != m) continue;
    bool ok = true;
    double max_removed = -1;
    for (std::size_t b = 0; b < n && ok; ++b) {
      if (!(mask >> b & 1)) continue;
      max_removed = std::max(max_removed, weight[b]);
      bool justified = false;
      for (std::uint64_t sub = (mask - 1) & mask;; sub = (sub - 1) & mask) {
        if (selected[sub] >> b & 1) justified = true;
        if (sub == 0 || justified) break;
      }
      ok = justified;
    }
    if (!ok) continue;
    double min_kept = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < n; ++b) {
      if (selected[mask] >> b & 1) min_kept = std::min(min_kept, weight[b]);
    }
    if (max_removed > min_kept) continue;
    if (size < best.min_size) best = {size, {}};
    if (!best.admits(*derived[mask])) best.outcomes.push_back(*derived[mask]);
  }
  if (best.outcomes.empty()) throw std::runtime_error("oracle: no admissible suppression set");
  return best;
}

/// Random alpha table on the given schema with entries N(0, scale).
inline CellArch random_arch(const pdarts::CellSchema& schema, pdarts::Rng& rng, double scale) {
  CellArch a{schema, {}};
  for (const auto& c : schema.candidates) {
    std::vector<double> row(c.size());
    for (auto& v : row) v = rng.normal(0.0, scale);
    a.alpha.push_back(row);
  }
  return a;
}

/// Random valid genotype with B intermediate nodes.
inline pdarts::Genotype random_genotype(int nodes, pdarts::Rng& rng) {
  pdarts::Genotype g;
  for (auto* cell : {&g.normal, &g.reduce}) {
    for (int to = 2; to <= nodes + 1; ++to) {
      const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(to)));
      int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(to - 1)));
      if (b >= a) ++b;
      auto op = [&] { return pdarts::kAllOps[1 + rng.below(pdarts::kNumOps - 1)]; };
      cell->push_back({Pick{op(), a}, Pick{op(), b}});
    }
  }
  for (int n = 2; n <= nodes + 1; ++n) g.concat.push_back(n);
  return g;
}

}  // namespace oracle
