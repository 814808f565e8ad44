#include "pdarts/gradcheck_suite.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <span>

#include "pdarts/gradcheck.hpp"
#include "pdarts/supernet.hpp"

namespace pdarts {

bool GradcheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

namespace {

constexpr double kEps = 1e-6;

// Distinct values `gap` apart in random order: max-pool windows keep a
// unique winner and no ReLU input sits near its kink under a probe.
Tensor<double> separated(const Shape& shape, Rng& rng, double gap) {
  const auto n = static_cast<std::size_t>(numel(shape));
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 0.0);
  for (auto& x : v) x = (x - static_cast<double>(n) / 2.0 + 0.5) * gap;
  rng.shuffle(std::span<double>(v));
  return Tensor<double>::from_data(shape, std::move(v));
}

std::vector<double> probe(std::int64_t n, Rng& rng) {
  std::vector<double> r(static_cast<std::size_t>(n));
  for (auto& v : r) v = rng.normal();
  return r;
}

double check(const std::function<Tensor<double>()>& f, Tensor<double> wrt) {
  const auto r = finite_difference_check<double>(f, std::move(wrt), kEps);
  return r.finite ? r.max_error : std::numeric_limits<double>::infinity();
}

}  // namespace

GradcheckReport run_gradcheck_suite(int seeds, double tolerance, std::ostream* log) {
  GradcheckReport report;
  report.tolerance = tolerance;
  auto record = [&](std::string name, double worst) {
    report.entries.push_back({std::move(name), seeds, worst, worst <= tolerance});
    if (log) {
      const auto& e = report.entries.back();
      *log << (e.passed ? "ok   " : "FAIL ") << e.name << " max_rel_error=" << e.max_error << "\n";
    }
  };

  for (auto kind : kAllOps) {
    for (int stride : {1, 2}) {
      double worst = 0;
      for (int s = 0; s < seeds; ++s) {
        Rng rng(derive_seed(static_cast<std::uint64_t>(s), "gradcheck-op", op_index(kind), stride));
        ParamStore<double> store;
        auto op = instantiate_op<double>(kind, 4, stride, true, ParamBuilder<double>(store, rng, "op"));
        auto x = separated({2, 4, 6, 6}, rng, 0.05);
        x.set_requires_grad(true);
        const auto r = probe(numel(op->output_shape(x.shape())), rng);
        auto f = [&] { return sum_product(op->forward(x, true), std::span<const double>(r)); };
        worst = std::max(worst, check(f, x));
        for (const auto& [name, p] : store.params()) worst = std::max(worst, check(f, p));
      }
      record("op/" + std::string(op_name(kind)) + "/stride" + std::to_string(stride), worst);
    }
  }

  {
    const std::vector<OpKind> all(kAllOps.begin(), kAllOps.end());
    double worst_x = 0, worst_a = 0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(derive_seed(static_cast<std::uint64_t>(s), "gradcheck-edge"));
      ParamStore<double> store;
      const int stride = s % 2 ? 2 : 1;
      MixedEdge<double> edge(all, 2, stride, ParamBuilder<double>(store, rng, "edge"));
      auto x = separated({2, 2, 4, 4}, rng, 0.05);
      x.set_requires_grad(true);
      auto alpha = Tensor<double>::from_data({kNumOps}, probe(kNumOps, rng), true);
      const auto r = probe(numel(edge.output_shape(x.shape())), rng);
      auto f = [&] { return sum_product(edge_mix_forward(edge, alpha, x, SkipDropout{}, true), std::span<const double>(r)); };
      worst_x = std::max(worst_x, check(f, x));
      worst_a = std::max(worst_a, check(f, alpha));
    }
    record("edge_mix/x", worst_x);
    record("edge_mix/alpha", worst_a);
  }

  {
    double worst_x = 0, worst_w = 0, worst_a = 0;
    const SearchNetConfig cfg{2, 4, 2, 4, 8, 3};
    const auto cell = CellSchema::full(cfg.nodes);
    const SearchSchema schema{cell, cell};
    for (int s = 0; s < seeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s);
      SuperNet<double> net(cfg, schema, derive_seed(seed, "gradcheck-net"));
      auto alphas = init_alphas<double>(schema, derive_seed(seed, "gradcheck-alpha"), 1.0);
      Rng rng(derive_seed(seed, "gradcheck-data"));
      auto x = separated({2, 3, 8, 8}, rng, 0.01);
      x.set_requires_grad(true);
      const std::vector<int> labels{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4))};
      auto f = [&] { return cross_entropy(net.forward(x, alphas, SkipDropout{}, true), std::span<const int>(labels)); };
      worst_x = std::max(worst_x, check(f, x));
      for (const auto& a : alphas.reduce) worst_a = std::max(worst_a, check(f, a));
      for (const char* name : {"stem/conv", "classifier/weight", "cell1/pre1/conv"}) {
        worst_w = std::max(worst_w, check(f, net.params().get(name)));
      }
    }
    record("supernet/x", worst_x);
    record("supernet/weights", worst_w);
    record("supernet/alpha", worst_a);
  }
  return report;
}

}  // namespace pdarts
