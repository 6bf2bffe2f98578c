// Acceptance suite. Runs each criterion, prints one PASS/FAIL line per
// criterion, and exits non-zero if any fails. Pass criterion numbers as
// arguments to run a subset, e.g. `acceptance 1 3 4`.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "csv_reader.hpp"
#include "projsdpa/cli/commands.hpp"
#include "projsdpa/numerics/finite_difference.hpp"

using namespace projsdpa;
namespace fs = std::filesystem;
using attention::Variant;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) { return pipeline::format_g6(v); }

fs::path work_dir() {
  const auto p = fs::temp_directory_path() / "projsdpa_acceptance";
  fs::create_directories(p);
  return p;
}

fs::path write_json(const std::string& name, const nlohmann::json& j) {
  const auto p = work_dir() / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::optional<double> find_number(const std::string& text, const std::string& key) {
  std::smatch m;
  const std::regex re(key + "=([0-9.eE+-]+|nan|inf)");
  if (!std::regex_search(text, m, re)) return std::nullopt;
  return std::stod(m[1]);
}

// ---------------------------------------------------------------- 1

Outcome equivalence_certificate() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run({"equiv-check", "--trials", "1000", "--max-t", "32", "--max-d", "16",
                      "--sigma2", "1", "--scale", "1"});
  const double secs = seconds_since(t0);
  const auto res = find_number(r.out, "max_residual");
  const bool ok = r.code == 0 && res && *res < 1e-9 && secs < 10.0;
  return {ok, "1000 instances, max_residual=" + (res ? fmt(*res) : "?") +
                  " exit=" + std::to_string(r.code) + " in " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 2

double kernel_gradient_error(Rng& rng) {
  // Each kernel is checked through a random linear functional of its output.
  double worst = 0.0;
  auto note = [&](const Tensor& analytic, const Tensor& numeric) {
    worst = std::max(worst, relative_error(analytic, numeric));
  };
  for (bool causal : {false, true}) {
    const std::size_t t = 5, d = 3;
    const Tensor q = rng_normal(rng, {t, d}, 0, 1), k = rng_normal(rng, {t, d}, 0, 1),
                 v = rng_normal(rng, {t, d}, 0, 1), w = rng_normal(rng, {t, d}, 0, 1),
                 wt = rng_normal(rng, {t, t}, 0, 1);

    const auto dg = attention::pairwise_sq_distance_backward(q, k, wt);
    note(dg.dq, finite_difference_grad(
                    [&](const Tensor& x) { return weighted_sum(attention::pairwise_sq_distance(x, k), wt); }, q));
    note(dg.dk, finite_difference_grad(
                    [&](const Tensor& x) { return weighted_sum(attention::pairwise_sq_distance(q, x), wt); }, k));

    const Tensor dist = attention::pairwise_sq_distance(q, k);
    const double s2 = 0.7;
    const Tensor z = attention::gaussian_weights(dist, s2, causal);
    const auto gg = attention::gaussian_weights_backward(z, dist, s2, wt);
    note(gg.ddistances,
         finite_difference_grad(
             [&](const Tensor& x) { return weighted_sum(attention::gaussian_weights(x, s2, causal), wt); },
             dist));
    const Tensor s2t({1}, s2);
    note(Tensor({1}, gg.dsigma2),
         finite_difference_grad(
             [&](const Tensor& x) {
               return weighted_sum(attention::gaussian_weights(dist, x[0], causal), wt);
             },
             s2t));

    const double scale = 0.6;
    const auto sr = attention::standard_sdpa(q, k, v, scale, causal);
    const auto sg = attention::standard_sdpa_backward(q, k, v, scale, sr.trace.weights, w);
    note(sg.dq, finite_difference_grad(
                    [&](const Tensor& x) { return weighted_sum(attention::standard_sdpa(x, k, v, scale, causal).y, w); }, q));
    note(sg.dk, finite_difference_grad(
                    [&](const Tensor& x) { return weighted_sum(attention::standard_sdpa(q, x, v, scale, causal).y, w); }, k));
    note(sg.dv, finite_difference_grad(
                    [&](const Tensor& x) { return weighted_sum(attention::standard_sdpa(q, k, x, scale, causal).y, w); }, v));

    for (bool normalize : {false, true}) {
      const auto pr = attention::projection_sdpa(q, k, s2, causal, normalize);
      const auto pg = attention::projection_sdpa_backward(pr.cache, pr.trace, w);
      auto f = [&](const Tensor& qq, const Tensor& kk, double ss) {
        return weighted_sum(attention::projection_sdpa(qq, kk, ss, causal, normalize).y, w);
      };
      note(pg.dq, finite_difference_grad([&](const Tensor& x) { return f(x, k, s2); }, q));
      note(pg.dk, finite_difference_grad([&](const Tensor& x) { return f(q, x, s2); }, k));
      note(Tensor({1}, pg.dsigma2),
           finite_difference_grad([&](const Tensor& x) { return f(q, k, x[0]); }, s2t));
    }
  }
  return worst;
}

Outcome gradient_audit(const fs::path& config_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run({"gradcheck", "--config", (config_dir / "micro_gradcheck.json").string()});
  double model_worst = 0.0;
  std::set<std::string> variants;
  bool parsed = true;
  try {
    const auto table = csv::parse(r.out);
    for (const auto& row : table.rows) {
      variants.insert(row[0]);
      model_worst = std::max(model_worst, std::stod(row[3]));
    }
  } catch (const std::exception&) {
    parsed = false;
  }
  Rng rng(2024);
  double kernel_worst = 0.0;
  for (int i = 0; i < 5; ++i) kernel_worst = std::max(kernel_worst, kernel_gradient_error(rng));
  const double secs = seconds_since(t0);
  const bool ok = r.code == 0 && parsed && variants.size() == 2 && model_worst < 1e-3 &&
                  kernel_worst < 1e-4 && secs < 60.0;
  return {ok, "model max rel err=" + fmt(model_worst) + " (both variants), kernel max rel err=" +
                  fmt(kernel_worst) + " in " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 3

Outcome masking_causality() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(31337);
  std::size_t above_diag = 0, nonzero_above = 0, perturbed = 0, leaks = 0;
  for (int probe = 0; probe < 100; ++probe) {
    model::ModelConfig c;
    c.d_model = 8;
    c.num_heads = 2;
    c.num_encoder_layers = 1;
    c.num_decoder_layers = 2;
    c.ff_dim = 12;
    c.src_vocab = c.tgt_vocab = 13;
    c.max_len = 6;
    c.variant = probe % 2 ? Variant::Projection : Variant::Standard;
    c.normalize_rows = probe % 4 >= 2 ? attention::RowNorm::ExplicitL2 : attention::RowNorm::None;
    c.sigma2_self = probe % 3 == 0 ? 0.01 : 0.5;
    c.sigma2_cross = 0.05;
    c.seed = static_cast<std::uint64_t>(probe);
    const model::Transformer net(c);
    const auto p = model::TransformerParams::init(c);
    std::vector<model::TokenId> src(c.max_len), tgt(c.max_len);
    for (auto& x : src) x = static_cast<model::TokenId>(rng.below(c.src_vocab));
    for (auto& x : tgt) x = static_cast<model::TokenId>(rng.below(c.tgt_vocab));

    model::ForwardCache cache;
    const Tensor logits = net.forward(src, tgt, p, &cache);
    for (const auto& layer : cache.decoder)
      for (const auto& head : layer.self_attn.heads) {
        const Tensor& z = head.trace.weights;
        for (std::size_t i = 0; i < z.rows(); ++i)
          for (std::size_t j = i + 1; j < z.cols(); ++j) {
            ++above_diag;
            nonzero_above += z(i, j) != 0.0;
          }
      }

    const std::size_t t = rng.below(c.max_len - 1);
    auto future = tgt;
    for (std::size_t j = t + 1; j < future.size(); ++j)
      future[j] = static_cast<model::TokenId>((future[j] + 1 + rng.below(c.tgt_vocab - 1)) % c.tgt_vocab);
    const Tensor changed = net.forward(src, future, p);
    for (std::size_t i = 0; i <= t; ++i) {
      ++perturbed;
      for (std::size_t v = 0; v < logits.cols(); ++v)
        if (changed(i, v) != logits(i, v)) {
          ++leaks;
          break;
        }
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = nonzero_above == 0 && leaks == 0 && above_diag > 0 && secs < 10.0;
  return {ok, "100 probes: " + std::to_string(nonzero_above) + "/" + std::to_string(above_diag) +
                  " nonzero future weights, " + std::to_string(leaks) + "/" +
                  std::to_string(perturbed) + " positions changed by future tokens, " +
                  fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 4

Outcome sigma_limits() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(404);
  double uniform_dev = 0.0, nearest_min = 1.0, gap_min = 1e300;
  std::size_t gapped = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t tq = 1 + rng.below(12), tk = 2 + rng.below(12), d = 1 + rng.below(8);
    const Tensor q = rng_normal(rng, {tq, d}, 0, 1), k = rng_normal(rng, {tk, d}, 0, 1);
    const bool normalize = trial % 2 == 1;

    const auto wide = attention::projection_sdpa(q, k, 1e8, false, normalize);
    for (double z : wide.trace.weights.data())
      uniform_dev = std::max(uniform_dev, std::abs(z - 1.0 / static_cast<double>(tk)));

    const auto narrow = attention::projection_sdpa(q, k, 1e-6, false, normalize);
    const Tensor& dist = *narrow.trace.distances;
    for (std::size_t i = 0; i < tq; ++i) {
      auto row = dist.row(i);
      std::vector<double> sorted(row.begin(), row.end());
      std::sort(sorted.begin(), sorted.end());
      const double gap = sorted[1] - sorted[0];
      if (gap < 0.01) continue;
      ++gapped;
      gap_min = std::min(gap_min, gap);
      const auto nearest = static_cast<std::size_t>(std::min_element(row.begin(), row.end()) - row.begin());
      nearest_min = std::min(nearest_min, narrow.trace.weights(i, nearest));
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = uniform_dev <= 1e-6 && gapped > 0 && nearest_min >= 1.0 - 1e-9 && secs < 5.0;
  return {ok, "sigma2=1e8 max |z-1/T|=" + fmt(uniform_dev) + "; sigma2=1e-6 min nearest weight=" +
                  fmt(nearest_min) + " over " + std::to_string(gapped) + " rows with gap>=0.01, " +
                  fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 5

Outcome copy_task_parity(const fs::path& config_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  auto base = read_json(config_dir / "copy_task.json");
  std::map<std::string, double> acc;
  std::string detail;
  bool ran = true;
  for (const std::string v : {"standard", "projection"}) {
    auto j = base;
    j["variant"] = v;
    const auto cfg = write_json("copy_" + v + ".json", j);
    const auto r = run({"train", "--config", cfg.string(), "--out", (work_dir() / ("copy_" + v)).string()});
    const auto a = find_number(r.out, "final_val_accuracy");
    if (r.code != 0 || !a) {
      ran = false;
      detail += v + " exit=" + std::to_string(r.code) + " " + r.err + "; ";
      continue;
    }
    acc[v] = *a;
    detail += v + " val acc=" + fmt(*a) + "; ";
  }
  const double secs = seconds_since(t0);
  const bool shape_ok = base.at("copy_vocab") == 20 && base.at("copy_len") == 8 &&
                        base.at("d_model") == 64 && base.at("num_heads") == 8 &&
                        base.at("num_encoder_layers") == 2 && base.at("num_decoder_layers") == 2 &&
                        base.at("epochs") == 30;
  const bool ok = ran && shape_ok && acc["standard"] >= 0.95 && acc["projection"] >= 0.95 &&
                  std::abs(acc["standard"] - acc["projection"]) <= 0.05 && secs < 900.0;
  return {ok, detail + "gap=" + fmt(std::abs(acc["standard"] - acc["projection"])) + ", " +
                  fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 6

Outcome benchmark_harness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run({"bench", "--sizes", "32,64,128,256", "--d", "64", "--heads", "8",
                      "--reps", "20", "--variant", "both"});
  const double secs = seconds_since(t0);
  if (r.code != 0) return {false, "bench exit=" + std::to_string(r.code) + " " + r.err};
  csv::Table t;
  try {
    t = csv::parse(r.out);
  } catch (const std::exception& e) {
    return {false, std::string("malformed CSV: ") + e.what()};
  }
  const std::vector<std::string> header{"variant", "phase", "T", "d", "heads", "median_s", "iqr_s"};
  bool ok = t.header == header && t.rows.size() == 4u * 2 * 2;
  bool hw = false;
  for (const auto& c : t.comments) hw |= c.rfind("# hardware: ", 0) == 0;
  ok = ok && hw;

  // Log-log least-squares slope over the large-T points (T >= 64); the
  // doubling ratio is 2^slope.
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const auto& row : t.rows) {
    const double m = std::stod(row[5]);
    ok = ok && m > 0.0;
    if (std::stod(row[2]) >= 64) series[row[0] + "/" + row[1]].emplace_back(std::log(std::stod(row[2])), std::log(m));
  }
  std::string detail;
  for (const auto& [name, pts] : series) {
    double mx = 0, my = 0;
    for (auto [x, y] : pts) mx += x, my += y;
    mx /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    double sxy = 0, sxx = 0;
    for (auto [x, y] : pts) sxy += (x - mx) * (y - my), sxx += (x - mx) * (x - mx);
    const double ratio = std::pow(2.0, sxy / sxx);
    ok = ok && ratio >= 3.0 && ratio <= 6.0;
    detail += name + " x" + fmt(ratio) + "; ";
  }
  ok = ok && series.size() == 4 && secs < 300.0;
  return {ok, "doubling ratios " + detail + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 7

Outcome determinism(const fs::path& config_dir) {
  auto j = read_json(config_dir / "copy_task.json");
  j["epochs"] = 3;
  j["copy_pairs"] = 400;
  const auto cfg = write_json("determinism.json", j);
  const auto a = work_dir() / "det_a", b = work_dir() / "det_b";
  const auto ra = run({"train", "--config", cfg.string(), "--out", a.string()});
  const auto rb = run({"train", "--config", cfg.string(), "--out", b.string()});
  const std::string ma = slurp(a / "metrics.csv"), mb = slurp(b / "metrics.csv");
  const bool ok = ra.code == 0 && rb.code == 0 && !ma.empty() && ma == mb;
  return {ok, "two runs, " + std::to_string(ma.size()) + " bytes each, " +
                  (ma == mb ? "identical" : "DIFFERENT")};
}

// ---------------------------------------------------------------- 8

fs::path synthetic_corpus(std::size_t pairs) {
  // Random "sentences" over a few thousand word forms with punctuation and
  // capitals, so tokenization and a large vocabulary are exercised.
  const auto path = work_dir() / "synthetic_corpus.tsv";
  std::ofstream out(path);
  Rng rng(8);
  auto word = [&](char lead, std::size_t i) { return std::string(1, lead) + std::to_string(i); };
  for (std::size_t n = 0; n < pairs; ++n) {
    const std::size_t len = 1 + rng.below(9);
    std::string src, tgt;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t w = rng.below(4000);
      src += (i ? " " : "") + (i == 0 ? std::string("W") + std::to_string(w) : word('w', w));
      tgt += (i ? " " : "") + word('p', (w * 7919) % 4000);
    }
    out << src << ".\t" << tgt << "!\n";
  }
  return path;
}

Outcome reference_smoke(const fs::path& config_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg_path = config_dir / "reference_smoke.json";
  const auto j = read_json(cfg_path);
  const auto rc = cli::load_run_config(cfg_path);
  const bool settings = rc.model.num_heads == 8 && rc.model.max_len == 10 &&
                        rc.vocab_cap == 15000 && rc.model.sigma2_self == 0.01 &&
                        rc.model.sigma2_cross == 0.05 &&
                        rc.train.split == std::array<double, 3>{0.7, 0.15, 0.15} &&
                        !rc.model.encoder_self_attention().causal &&
                        rc.model.decoder_self_attention().causal &&
                        !rc.model.cross_attention().causal;
  const auto r = run({"train", "--config", cfg_path.string(), "--data",
                      synthetic_corpus(1000).string(), "--out", (work_dir() / "reference").string()});
  const auto steps = find_number(r.out, "steps");
  const double secs = seconds_since(t0);
  const bool ok = settings && j.contains("corpus_limit") && r.code == 0 && steps && *steps >= 1 &&
                  secs < 120.0;
  return {ok, "settings " + std::string(settings ? "ok" : "WRONG") + ", exit=" +
                  std::to_string(r.code) + ", steps=" + (steps ? fmt(*steps) : "?") + ", " +
                  fmt(secs) + " s" + (r.code ? " " + r.err : "")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config_dir = PROJSDPA_CONFIG_DIR;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"equivalence certificate", equivalence_certificate},
      {"gradient audit", [&] { return gradient_audit(config_dir); }},
      {"masking and causality", masking_causality},
      {"sigma limits", sigma_limits},
      {"copy-task learning parity", [&] { return copy_task_parity(config_dir); }},
      {"benchmark harness", benchmark_harness},
      {"determinism", [&] { return determinism(config_dir); }},
      {"reference-configuration smoke test", [&] { return reference_smoke(config_dir); }},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << i + 1 << " ("
              << criteria[i].first << "): " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
