#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pdarts/genotype.hpp"

using namespace pdarts;

namespace {

const double kNegInf = -std::numeric_limits<double>::infinity();

CellArch arch_with(const CellSchema& schema, double fill) {
  CellArch a{schema, {}};
  for (const auto& c : schema.candidates) a.alpha.emplace_back(c.size(), fill);
  return a;
}

void set_alpha(CellArch& a, int from, int to, OpKind op, double v) {
  const int e = a.schema.spec.edge_index(from, to);
  const auto& c = a.schema.candidates[e];
  a.alpha[e][std::find(c.begin(), c.end(), op) - c.begin()] = v;
}

Genotype flat(int nodes) {
  Genotype g;
  for (int k = 0; k < nodes; ++k) {
    g.normal.push_back({Pick{OpKind::sep_conv_3x3, 0}, Pick{OpKind::skip_connect, 1}});
    g.reduce.push_back({Pick{OpKind::max_pool_3x3, 1}, Pick{OpKind::dil_conv_3x3, 0}});
    g.concat.push_back(k + 2);
  }
  return g;
}

}  // namespace

TEST_CASE("cell spec edge numbering") {
  CHECK(CellSpec{4}.edge_count() == 14);
  CHECK(CellSpec{2}.edge_count() == 5);
  for (int b = 1; b <= 6; ++b) {
    CellSpec s{b};
    int expected = 0;
    for (int n = 0; n < b; ++n) expected += n + 2;
    CHECK(s.edge_count() == expected);
    for (int e = 0; e < s.edge_count(); ++e) {
      const auto [from, to] = s.edge(e);
      CHECK(from < to);
      CHECK(s.edge_index(from, to) == e);
    }
  }
  CHECK_THROWS_AS(CellSpec{2}.edge_index(3, 3), InvalidArgument);
}

TEST_CASE("derive_genotype examples") {
  SUBCASE("single node keeps both edges") {
    auto a = arch_with(CellSchema::full(1), 0.0);
    set_alpha(a, 0, 2, OpKind::zero, 9.0);
    auto picks = derive_cell(a);
    REQUIRE(picks.size() == 1);
    CHECK(picks[0][0].from != picks[0][1].from);
  }
  SUBCASE("zero is never picked even when it dominates") {
    CellSchema s = CellSchema::uniform(1, {OpKind::zero, OpKind::skip_connect});
    CellArch a{s, {{std::log(0.9), std::log(0.1)}, {std::log(0.9), std::log(0.1)}}};
    auto picks = derive_cell(a);
    CHECK(picks[0][0] == Pick{OpKind::skip_connect, 0});
    CHECK(picks[0][1] == Pick{OpKind::skip_connect, 1});
  }
  SUBCASE("ties go to lower source then lower op") {
    auto a = arch_with(CellSchema::full(2), 0.0);
    auto picks = derive_cell(a);
    CHECK(picks[1][0] == Pick{OpKind::skip_connect, 0});
    CHECK(picks[1][1] == Pick{OpKind::skip_connect, 1});
  }
  SUBCASE("edge with only the zero candidate cannot be forced") {
    CellSchema s = CellSchema::uniform(1, {OpKind::zero, OpKind::skip_connect});
    s.candidates[1] = {OpKind::zero};
    CellArch a{s, {{0.0, 0.0}, {0.0}}};
    CHECK_THROWS_WITH_AS(derive_cell(a), doctest::Contains("node 2"), InvalidArgument);
  }
}

TEST_CASE("derive_genotype matches exhaustive enumeration and ignores per-edge shifts") {
  Rng rng(21);
  const auto schemas = {CellSchema::full(2), CellSchema::uniform(2, {OpKind::zero, OpKind::skip_connect, OpKind::sep_conv_3x3})};
  for (const auto& schema : schemas) {
    for (int t = 0; t < 300; ++t) {
      auto a = oracle::random_arch(schema, rng, 1.0);
      const auto picks = derive_cell(a);
      CHECK(picks == oracle::derive_by_enumeration(a));
      auto shifted = a;
      for (auto& row : shifted.alpha) {
        const double c = rng.normal(0, 5);
        for (auto& v : row) v += c;
      }
      CHECK(derive_cell(shifted) == picks);
    }
  }
}

TEST_CASE("refine_skips") {
  SUBCASE("already within the limit is a fixed point") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      auto a = oracle::random_arch(CellSchema::full(4), rng, 1.0);
      const auto base = derive_cell(a);
      const auto r = refine_cell(a, count_skips(base));
      CHECK(r.picks == base);
      CHECK(r.iterations == 0);
    }
  }
  SUBCASE("rigged table with four skips keeps the two heaviest") {
    auto a = arch_with(CellSchema::full(2), 0.0);
    // node 2: skip on both edges, node 3: skip on edges from 0 and 2
    set_alpha(a, 0, 2, OpKind::skip_connect, 3.0);
    set_alpha(a, 1, 2, OpKind::skip_connect, 2.0);
    set_alpha(a, 0, 3, OpKind::skip_connect, 2.5);
    set_alpha(a, 2, 3, OpKind::skip_connect, 1.5);
    set_alpha(a, 1, 3, OpKind::sep_conv_5x5, 1.0);
    set_alpha(a, 1, 2, OpKind::avg_pool_3x3, 0.5);
    REQUIRE(count_skips(derive_cell(a)) == 4);
    const auto r = refine_cell(a, 2);
    CHECK(count_skips(r.picks) == 2);
    CHECK(r.picks[0][0] == Pick{OpKind::skip_connect, 0});
    CHECK(r.picks[1][0] == Pick{OpKind::skip_connect, 0});
    const auto ref = oracle::refine_by_suppression(a, 2);
    CHECK(ref.admits(r.picks));
    CHECK(ref.outcomes.size() == 1);
  }
  SUBCASE("limit zero removes every skip") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
      auto a = oracle::random_arch(CellSchema::full(4), rng, 2.0);
      CHECK(count_skips(refine_cell(a, 0).picks) == 0);
    }
  }
  SUBCASE("agrees with the suppression-subset oracle and never touches other picks") {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
      auto a = oracle::random_arch(CellSchema::full(2), rng, 1.0);
      // Favour skips so refinement has work to do.
      for (auto& row : a.alpha) row[1] += 1.5;
      const auto base = derive_cell(a);
      for (int m = 0; m <= 4; ++m) {
        const auto r = refine_cell(a, m);
        CHECK(count_skips(r.picks) <= m);
        const auto ref = oracle::refine_by_suppression(a, m);
        CHECK(ref.admits(r.picks));
        CHECK(ref.outcomes.size() == 1);
        for (std::size_t e = 0; e < r.arch.alpha.size(); ++e) {
          for (std::size_t i = 0; i < r.arch.alpha[e].size(); ++i) {
            if (std::isinf(r.arch.alpha[e][i])) CHECK(r.arch.schema.candidates[e][i] == OpKind::skip_connect);
          }
        }
        // Non-skip picks of the unrefined cell all survive.
        for (std::size_t k = 0; k < base.size(); ++k) {
          for (const auto& p : base[k]) {
            if (p.op == OpKind::skip_connect) continue;
            const bool kept = r.picks[k][0] == p || r.picks[k][1] == p;
            CHECK(kept);
          }
        }
      }
    }
  }
  SUBCASE("default limits constrain only the normal cell") {
    auto n = arch_with(CellSchema::full(2), 0.0);
    for (auto& row : n.alpha) row[1] = 4.0;
    ArchSnapshot snap{n, n};
    const auto g = refine_skips(snap, SkipLimits{});
    CHECK(count_skips(g.normal) == 2);
    CHECK(count_skips(g.reduce) == 4);
  }
  SUBCASE("negative limit rejected") {
    CHECK_THROWS_AS(refine_cell(arch_with(CellSchema::full(2), 0.0), -1), InvalidArgument);
  }
}

TEST_CASE("connection levels") {
  for (int b = 1; b <= 6; ++b) {
    CAPTURE(b);
    const auto hist = connection_levels(flat(b).normal);
    CHECK(hist == std::map<int, int>{{1, 2 * b}});

    CellPicks chain;
    chain.push_back({Pick{OpKind::sep_conv_3x3, 1}, Pick{OpKind::skip_connect, 0}});
    for (int to = 3; to <= b + 1; ++to) chain.push_back({Pick{OpKind::sep_conv_3x3, to - 1}, Pick{OpKind::skip_connect, 0}});
    std::map<int, int> expected{{1, b + 1}};
    for (int l = 2; l <= b; ++l) expected[l] = 1;
    CHECK(connection_levels(chain) == expected);
  }
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const int b = 1 + static_cast<int>(rng.below(5));
    const auto g = oracle::random_genotype(b, rng);
    for (auto type : {CellType::normal, CellType::reduce}) {
      const auto hist = connection_levels(g.of(type));
      int total = 0;
      for (const auto& [level, count] : hist) {
        CHECK(level >= 1);
        CHECK(level <= b);
        total += count;
      }
      CHECK(total == 2 * b);
    }
  }
  CHECK(histogram_csv({{1, 3}, {2, 1}}) == "level,count\n1,3\n2,1\n");
}

TEST_CASE("genotype text format") {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const auto g = oracle::random_genotype(1 + static_cast<int>(rng.below(5)), rng);
    const auto text = genotype_serialize(g);
    CHECK(genotype_parse(text) == g);
    CHECK(genotype_serialize(genotype_parse(text)) == text);
  }
  const std::string three_picks =
      R"({"normal":[[{"op":"skip_connect","from":0},{"op":"skip_connect","from":1},{"op":"sep_conv_3x3","from":0}]],)"
      R"("reduce":[[{"op":"skip_connect","from":0},{"op":"skip_connect","from":1}]],"concat":[2]})";
  CHECK_THROWS_WITH_AS(genotype_parse(three_picks), doctest::Contains("$.normal[0]: expected exactly 2 picks"), FormatError);
  const std::string unknown =
      R"({"normal":[[{"op":"sep_conv_7x7","from":0},{"op":"skip_connect","from":1}]],)"
      R"("reduce":[[{"op":"skip_connect","from":0},{"op":"skip_connect","from":1}]],"concat":[2]})";
  CHECK_THROWS_WITH_AS(genotype_parse(unknown), doctest::Contains("unknown operation 'sep_conv_7x7'"), FormatError);
  const std::string zero_pick =
      R"({"normal":[[{"op":"zero","from":0},{"op":"skip_connect","from":1}]],)"
      R"("reduce":[[{"op":"skip_connect","from":0},{"op":"skip_connect","from":1}]],"concat":[2]})";
  CHECK_THROWS_AS(genotype_parse(zero_pick), FormatError);
  const std::string same_source =
      R"({"normal":[[{"op":"sep_conv_3x3","from":1},{"op":"skip_connect","from":1}]],)"
      R"("reduce":[[{"op":"skip_connect","from":0},{"op":"skip_connect","from":1}]],"concat":[2]})";
  CHECK_THROWS_AS(genotype_parse(same_source), FormatError);
  const std::string forward_source =
      R"({"normal":[[{"op":"sep_conv_3x3","from":2},{"op":"skip_connect","from":1}]],)"
      R"("reduce":[[{"op":"skip_connect","from":0},{"op":"skip_connect","from":1}]],"concat":[2]})";
  CHECK_THROWS_AS(genotype_parse(forward_source), FormatError);
  CHECK_THROWS_WITH_AS(genotype_parse("{\"normal\": [}"), doctest::Contains("byte"), FormatError);
}

TEST_CASE("architecture snapshot text format") {
  Rng rng(8);
  ArchSnapshot a{oracle::random_arch(CellSchema::full(2), rng, 1.0),
                 oracle::random_arch(CellSchema::uniform(2, {OpKind::skip_connect, OpKind::sep_conv_3x3}), rng, 1.0)};
  a.normal.alpha[3][1] = kNegInf;
  const auto text = arch_to_json(a);
  const auto back = arch_from_json(text);
  CHECK(back.normal.alpha == a.normal.alpha);
  CHECK(back.reduce.schema == a.reduce.schema);
  CHECK(arch_to_json(back) == text);
  const SearchSchema s{a.normal.schema, a.reduce.schema};
  CHECK(schema_from_json(schema_to_json(s)) == s);
  CHECK_THROWS_AS(arch_from_json(R"({"nodes":2,"normal":[],"reduce":[]})"), FormatError);
}
