#pragma once

#include <map>
#include <optional>
#include <string>

#include "pdarts/arch.hpp"

namespace pdarts {

using CellPicks = std::vector<std::array<Pick, 2>>;

/// For each intermediate node, ranks incoming edges by their largest
/// softmax weight among non-zero candidates and keeps the best two; each kept
/// edge contributes its best non-zero candidate. Ties go to the lower source
/// index, then the lower operation index. Candidates with alpha -inf are
/// ineligible. Throws InvalidArgument if a node has fewer than two edges with
/// an eligible candidate.
CellPicks derive_cell(const CellArch& arch);

/// Both cells, concatenating every intermediate node.
Genotype derive_genotype(const ArchSnapshot& arch);

int count_skips(const CellPicks& picks);

struct RefineResult {
  CellPicks picks;
  /// The architecture after suppression (-inf on removed skip candidates).
  CellArch arch;
  int iterations = 0;
};

/// Re-derives until at most `max_skips` skip_connect picks remain, each round
/// keeping the picked skips with the largest softmax weights and removing the
/// other picked skips from their edges.
RefineResult refine_cell(const CellArch& arch, int max_skips);

/// Skip limits per cell type; nullopt leaves that cell unconstrained.
struct SkipLimits {
  std::optional<int> normal = 2;
  std::optional<int> reduce;
};

Genotype refine_skips(const ArchSnapshot& arch, const SkipLimits& limits);

/// Edge count per connection level: inputs are level 0, a node sits one
/// above its highest source, an edge one above its source.
std::map<int, int> connection_levels(const CellPicks& picks);

/// "level,count" rows with a header line, levels ascending.
std::string histogram_csv(const std::map<int, int>& hist);

}  // namespace pdarts
