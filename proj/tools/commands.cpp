// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "helut/ckks_vm.hpp"
#include "helut/coded_helut.hpp"
#include "helut/config.hpp"
#include "helut/cost_model.hpp"
#include "helut/dlrm.hpp"
#include "helut/embedding.hpp"
#include "helut/errors.hpp"
#include "helut/experiments.hpp"
#include "helut/llm_embed.hpp"
#include "helut/model_io.hpp"

namespace helut::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string cost_table = "cpu-default";
  std::string out = "out";
  std::string strategy;
  std::optional<std::uint64_t> seed;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json to_json_vector(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

std::uint64_t pick_seed(const Options& o, const ConfigNode& root) {
  if (o.seed) return *o.seed;
  const auto s = root.get_int("seed", 0);
  if (s < 0) root.at("seed").fail("seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

VmParams vm_params(const ConfigNode& root) {
  return root.has("vm") ? parse_vm_params(root.at("vm")) : VmParams{};
}

ExecMode exec_mode(const ConfigNode& root) {
  const std::string m = root.get_string("mode", "functional");
  if (m == "functional") return ExecMode::functional;
  if (m == "accounting") return ExecMode::accounting;
  root.at("mode").fail("mode must be 'functional' or 'accounting'");
  return ExecMode::functional;
}

int upload_level(const ConfigNode& root, const VmParams& p) {
  const auto level = root.get_int("level", p.min_level + 1);
  if (level < p.min_level || level > p.max_level) root.at("level").fail("level outside [l_min, L]");
  return static_cast<int>(level);
}

DiagonalLayout diag_layout(const ConfigNode& root) {
  if (!root.has("layout")) return DiagonalLayout::full_ring;
  try {
    return diagonal_layout_from_string(root.at("layout").as_string());
  } catch (const ParameterError& e) {
    root.at("layout").fail(e.what());
  }
  return DiagonalLayout::full_ring;
}

CostTable cost_table(const Options& o) { return load_cost_table(resolve_cost_table(o.cost_table)); }

void write_manifest(const Options& o, const std::string& command, std::uint64_t seed) {
  json m;
  m["command"] = command;
  m["config"] = o.config;
  m["seed"] = seed;
  m["cost_table"] = o.cost_table;
  if (!o.strategy.empty()) m["strategy"] = o.strategy;
  write_json(fs::path(o.out) / "manifest.json", m);
}

void write_reports(const Options& o, const OpLedger& ledger, const CostReport& report) {
  write_text(fs::path(o.out) / "ledger.json", ledger_json(ledger));
  write_text(fs::path(o.out) / "cost.json", cost_report_json(report));
  write_text(fs::path(o.out) / "cost.csv", cost_report_csv(report));
}

LookupRequest parse_request(const ConfigNode& root, const EmbeddingModelSpec& spec) {
  LookupRequest req;
  if (root.has("request")) {
    ConfigNode list = root.at("request");
    for (std::size_t i = 0; i < list.size(); ++i) {
      req.indices.push_back(
          TableIndex{list.at(i).at("table").as_string(), list.at(i).at("index").as_int()});
    }
  } else if (root.has("indices")) {
    const auto idx = root.at("indices").as_ints();
    if (idx.size() != spec.tables.size()) root.at("indices").fail("need one index per table");
    for (std::size_t i = 0; i < idx.size(); ++i) req.indices.push_back(TableIndex{spec.tables[i].id, idx[i]});
  } else {
    root.fail("lookup needs 'request' or 'indices'");
  }
  return req;
}

double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

// Concatenates the first `width` output slots across ciphertexts.
Eigen::VectorXd gather(const Vm& vm, const std::vector<CipherVec>& cts, std::int64_t width) {
  Eigen::VectorXd out(width);
  for (std::int64_t i = 0; i < width; ++i) {
    out(i) = vm.decrypt(cts[static_cast<std::size_t>(i / vm.slots())])(i % vm.slots());
  }
  return out;
}

int cmd_lookup(const Options& o, std::ostream& out) {
  ConfigNode root(load_json_file(o.config));
  const VmParams params = vm_params(root);
  const std::string strategy = o.strategy.empty() ? root.get_string("strategy", "digit_bsgs") : o.strategy;
  if (strategy != "onehot" && strategy != "digit_bsgs" && strategy != "coded_helut") {
    throw ParameterError("unknown strategy '" + strategy + "'; expected onehot, digit_bsgs or coded_helut");
  }
  const std::uint64_t seed = pick_seed(o, root);
  const int level = upload_level(root, params);
  const ExecMode mode = exec_mode(root);
  EmbeddingModelSpec spec = parse_embedding_spec(root.has("embedding") ? root.at("embedding") : root);
  const bool functional = mode == ExecMode::functional;

  if (strategy == "onehot") {
    spec.threshold = -1;
    for (auto& t : spec.tables) {
      t.base.reset();
      t.digits.reset();
    }
  } else if (strategy == "coded_helut") {
    for (auto& t : spec.tables) t.base = spec.base_for(t);
  }

  LookupRequest req;
  if (functional) req = parse_request(root, spec);
  const auto tables = build_tables(spec, seed, functional);
  Vm vm(params, mode);
  json result;
  result["strategy"] = strategy;
  OpLedger ledger;
  std::vector<Upload> uploads;
  int levels = 0;
  Eigen::VectorXd output, oracle;

  if (strategy == "coded_helut") {
    CodedLookupOptions opts;
    if (root.has("indicator")) {
      ConfigNode ind = root.at("indicator");
      opts.indicator.r = static_cast<int>(ind.get_int("r", opts.indicator.r));
      opts.indicator.s = static_cast<int>(ind.get_int("s", opts.indicator.s));
      if (opts.indicator.r < 0 || opts.indicator.s < 0) ind.fail("r and s must be non-negative");
    }
    const std::string imode = root.get_string("indicator_mode", "polynomial");
    if (imode == "exact") {
      opts.mode = IndicatorMode::exact;
    } else if (imode != "polynomial") {
      root.at("indicator_mode").fail("indicator_mode must be 'polynomial' or 'exact'");
    }
    std::vector<double> values;
    json ind = json::array();
    for (std::size_t i = 0; i < tables.size(); ++i) {
      const auto& stack = std::get<CodedTableStack>(tables[i]);
      CodedLookupOptions topts = opts;
      if (!root.has("indicator")) topts.indicator = sweep_indicator(stack.base);
      ind.push_back(json{{"table", stack.parent_id}, {"r", topts.indicator.r}, {"s", topts.indicator.s}});
      std::vector<std::int64_t> tok;
      if (functional) tok.push_back(req.indices.at(i).index);
      PipelineRun run = run_coded_pipeline(vm, stack, tok, topts, level);
      levels = std::max(levels, run.levels_consumed);
      if (functional) {
        for (const auto& shard : run.outputs) values.push_back(vm.decrypt(shard)(0));
      }
    }
    result["indicator"] = ind;
    ledger = vm.ledger();
    if (functional) output = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  } else {
    MatvecAlgo algo = MatvecAlgo::bsgs;
    const std::string a = root.get_string("algo", "bsgs");
    if (a == "hs") {
      algo = MatvecAlgo::hs;
    } else if (a != "bsgs") {
      root.at("algo").fail("algo must be 'hs' or 'bsgs'");
    }
    const PackedEmbeddingSet packed = pack_block_diagonal(tables, params, diag_layout(root));
    const Eigen::VectorXd client = functional ? encode_client(req, packed.layout()) : Eigen::VectorXd();
    PipelineRun run = run_digit_pipeline(vm, packed, client, level, algo);
    ledger = run.ledger;
    levels = run.levels_consumed;
    result["input_slots"] = packed.layout().total_slots();
    result["input_ciphertexts"] = packed.input_ciphertexts();
    result["diagonals"] = packed.diagonal_count();
    if (functional) output = gather(vm, run.outputs, packed.layout().output_width());
  }
  uploads = uploads_from_ledger(ledger);
  const CostReport report = estimate(ledger, uploads, params, cost_table(o));
  result["levels_consumed"] = levels;
  result["rotations"] = ledger.count(OpKind::rotate);
  result["total_seconds"] = report.total_seconds;
  if (functional) {
    oracle = lookup_plain(tables, req);
    result["output"] = to_json_vector(output);
    result["oracle"] = to_json_vector(oracle);
    result["max_abs_error"] = max_abs_diff(output, oracle);
  }
  write_reports(o, ledger, report);
  write_json(fs::path(o.out) / "output.json", result);
  write_manifest(o, "lookup", seed);
  out << "strategy " << strategy << ": total " << report.total_seconds << " s, "
      << ledger.count(OpKind::rotate) << " rotations, " << levels << " levels";
  if (functional) out << ", max error " << result["max_abs_error"].get<double>();
  out << "\n";
  return kOk;
}

int cmd_compare(const Options& o, std::ostream& out) {
  ConfigNode root(load_json_file(o.config));
  CompareSetting base = parse_compare_setting(root);
  std::vector<int> ds{base.d};
  if (root.has("d") && root.at("d").is_array()) {
    ds.clear();
    for (auto d : root.at("d").as_ints()) {
      if (d < 1) root.at("d").fail("embedding widths must be positive");
      ds.push_back(static_cast<int>(d));
    }
  }
  const CostTable table = cost_table(o);
  std::string csv = compare_csv_header();
  std::string breakdown = "phase,baseline_s,ours_s\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CompareSetting s = base;
    s.d = ds[i];
    const ComparePoint pt = compare_point(s, table);
    csv += compare_csv_row(pt);
    out << compare_csv_row(pt);
    if (i + 1 == ds.size()) {
      std::vector<std::string> phases;
      for (const auto& p : pt.baseline.phases) phases.push_back(p.phase);
      for (const auto& p : pt.ours.phases) {
        if (std::find(phases.begin(), phases.end(), p.phase) == phases.end()) phases.push_back(p.phase);
      }
      char buf[128];
      for (const auto& ph : phases) {
        std::snprintf(buf, sizeof buf, "%s,%.6g,%.6g\n", ph.c_str(), pt.baseline.phase_seconds(ph),
                      pt.ours.phase_seconds(ph));
        breakdown += buf;
      }
      std::snprintf(buf, sizeof buf, "total,%.6g,%.6g\n", pt.baseline.total_seconds,
                    pt.ours.total_seconds);
      breakdown += buf;
    }
  }
  write_text(fs::path(o.out) / "compare.csv", csv);
  write_text(fs::path(o.out) / "breakdown.csv", breakdown);
  write_manifest(o, "compare", 0);
  return kOk;
}

int cmd_dlrm(const Options& o, std::ostream& out) {
  ConfigNode root(load_json_file(o.config));
  const VmParams params = vm_params(root);
  const std::uint64_t seed = pick_seed(o, root);
  const int level = upload_level(root, params);
  const ExecMode mode = exec_mode(root);
  const bool functional = mode == ExecMode::functional;
  NetworkConfig net = parse_network(root.has("network") ? root.at("network") : root, seed);
  auto tables = build_tables(net.spec.embedding, seed, functional);
  DlrmModel model = build_model(net.spec, tables, params, diag_layout(root));
  if (net.auto_bound) {
    if (!functional) root.at("network").fail("an automatic activation bound needs functional mode");
    const auto n = root.get_int("calibration_samples", 32);
    std::vector<DlrmInput> samples;
    for (std::int64_t i = 0; i < n; ++i) samples.push_back(random_input(model, seed + 1000 + static_cast<std::uint64_t>(i)));
    net.spec.activation_bound = calibrate_activation_bound(model, samples);
    model = build_model(net.spec, tables, params, diag_layout(root));
  }
  Vm vm(params, mode);
  DlrmInput input;
  std::vector<CipherVec> cts;
  {
    PhaseScope ph(vm.ledger(), "upload");
    if (functional) input = random_input(model, seed);
    cts = encrypt_input(vm, model, input, level);
  }
  Bootstrapper boot(vm);
  const InferenceResult res = infer(vm, boot, model, cts);
  const OpLedger& ledger = vm.ledger();
  const CostReport report = estimate(ledger, uploads_from_ledger(ledger), params, cost_table(o));
  json result;
  result["activation"] = to_string(net.spec.activation);
  result["activation_bound"] = net.spec.activation_bound;
  result["activation_depth"] = model.activation.depth();
  result["bootstraps"] = res.bootstraps;
  result["total_seconds"] = report.total_seconds;
  result["bootstrap_share"] = report.total_seconds > 0 ? report.bootstrap_seconds / report.total_seconds : 0.0;
  result["input_slots"] = model.layout().total_slots();
  result["input_ciphertexts"] = cts.size();
  result["sparse_ciphertexts"] = model.packed.input_ciphertexts();
  result["embedding_diagonals"] = model.packed.diagonal_count();
  result["warnings"] = ledger.warnings();
  if (functional) {
    const double logit = vm.decrypt(res.logit)(0);
    const double plain = forward_plain(model, input);
    result["logit"] = logit;
    result["plain_logit"] = plain;
    result["exact_logit"] = forward_plain(model, input, true);
    result["abs_error"] = std::abs(logit - plain);
  }
  write_reports(o, ledger, report);
  write_json(fs::path(o.out) / "output.json", result);
  write_manifest(o, "dlrm", seed);
  out << "dlrm " << to_string(net.spec.activation) << ": " << res.bootstraps << " bootstraps, total "
      << report.total_seconds << " s, bootstrap share " << result["bootstrap_share"].get<double>();
  if (functional) out << ", logit " << result["logit"].get<double>();
  out << "\n";
  return kOk;
}

json run_llm_toy(const ConfigNode& node, const VmParams& params, std::uint64_t seed) {
  const auto vocab = node.at("V").as_int();
  const auto d = node.at("d").as_int();
  const auto tokens = node.at("tokens").as_ints();
  if (vocab < 1 || d < 1 || tokens.empty()) node.fail("toy needs positive V, d and tokens");
  const int level = static_cast<int>(node.get_int("level", params.min_level + 1));
  const EmbeddingTable table = random_table("vocab", vocab, static_cast<int>(d), seed);
  std::optional<CodedTableStack> stack;
  if (node.has("compression")) {
    CompressionSpec cs;
    cs.base = static_cast<int>(node.at("compression").get_int("p", 4));
    cs.digits = static_cast<int>(node.at("compression").get_int("digits", 0));
    stack = compress_table(table, cs, seed + 1);
  }
  Eigen::MatrixXd oracle(static_cast<Eigen::Index>(tokens.size()), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= vocab) node.at("tokens").fail("token outside vocabulary");
    oracle.row(static_cast<Eigen::Index>(i)) = stack ? stack->lookup(tokens[i]) : table.row(tokens[i]);
  }
  json out;
  const auto m = static_cast<Eigen::Index>(tokens.size());
  {
    Vm vm(params);
    SequenceLookup seq{tokens, vocab, static_cast<int>(d)};
    ColumnPackedMatrix cols = stack ? pack_columns_compressed(vm, seq, stack->base, stack->digits, level)
                                    : pack_columns(vm, seq, level);
    const auto res = cpmm_embedding(vm, cols, stack ? stack->stacked() : table.weights);
    double err = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const auto col = vm.decrypt(res[static_cast<std::size_t>(c)]);
      for (Eigen::Index i = 0; i < m; ++i) err = std::max(err, std::abs(col(i) - oracle(i, c)));
    }
    out["cpmm"] = json{{"max_abs_error", err},
                       {"rotations", vm.ledger().count(OpKind::rotate)},
                       {"pt_mul", vm.ledger().count(OpKind::pt_mul)}};
  }
  {
    Vm vm(params);
    const TableSource src = stack ? TableSource(*stack) : TableSource(table);
    const PackedEmbeddingSet packed = sequence_packing(src, m, params);
    const auto res = blockdiag_sequence_lookup(vm, packed, tokens, level);
    const Eigen::VectorXd flat = gather(vm, res, m * d);
    double err = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index c = 0; c < d; ++c) err = std::max(err, std::abs(flat(i * d + c) - oracle(i, c)));
    }
    out["blockdiag"] = json{{"max_abs_error", err},
                            {"rotations", vm.ledger().count(OpKind::rotate)},
                            {"input_ciphertexts", packed.input_ciphertexts()}};
  }
  return out;
}

int cmd_llm(const Options& o, std::ostream& out) {
  ConfigNode root(load_json_file(o.config));
  const VmParams params = vm_params(root);
  const std::uint64_t seed = pick_seed(o, root);
  const CostTable table = cost_table(o);
  const bool record_capacity = root.get_string("on_capacity_error", "fail") == "record";
  std::string csv = scenario_csv_header();
  if (root.has("scenarios")) {
    ConfigNode list = root.at("scenarios");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const LlmScenario s = parse_llm_scenario(list.at(i));
      ScenarioRow row;
      try {
        row = run_scenario(s, params, table);
      } catch (const CapacityError& e) {
        if (!record_capacity) throw;
        row.strategy = to_string(s.strategy);
        row.compressed = s.compression.has_value();
        row.m = s.m;
        row.status = "out_of_memory";
      }
      csv += scenario_csv_row(row);
      out << scenario_csv_row(row);
    }
  }
  write_text(fs::path(o.out) / "scenarios.csv", csv);
  if (root.has("generation")) {
    std::string gen = "strategy,compressed,per_token_seconds,round_trips\n";
    ConfigNode list = root.at("generation");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const LlmScenario s = parse_llm_scenario(list.at(i));
      const GenerationStepCost g = generation_step_cost(s, params, table);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%d,%.6g,%d\n", to_string(s.strategy).c_str(),
                    s.compression ? 1 : 0, g.report.total_seconds, g.round_trips);
      gen += buf;
    }
    write_text(fs::path(o.out) / "generation.csv", gen);
    out << gen;
  }
  if (root.has("toy")) {
    const json toy = run_llm_toy(root.at("toy"), params, seed);
    write_json(fs::path(o.out) / "toy.json", toy);
    out << "toy: cpmm error " << toy["cpmm"]["max_abs_error"].get<double>() << ", blockdiag error "
        << toy["blockdiag"]["max_abs_error"].get<double>() << "\n";
  }
  write_manifest(o, "llm", seed);
  return kOk;
}

int cmd_calibrate(const Options& o, std::ostream& out) {
  const fs::path ref_path = o.config.empty() ? default_reference_breakdown() : fs::path(o.config);
  const ReferenceBreakdown ref = load_reference_breakdown(ref_path);
  const CostTable table = calibrate_reference(ref);
  const fs::path dest = fs::path(o.out) / (table.name + ".json");
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  save_cost_table(table, dest);
  const ComparePoint pt = compare_point(ref.setting, table);
  out << "wrote " << dest.string() << "; baseline " << pt.baseline.total_seconds << " s, ours "
      << pt.ours.total_seconds << " s\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Private embedding lookups on a slot-level CKKS model", "helut"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "configuration file");
    if (config_required) c->required()->check(CLI::ExistingFile);
    sub->add_option("--cost-table", o.cost_table, "cost table name or path");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--out", o.out, "output directory");
  };
  auto* lookup = app.add_subcommand("lookup", "run one embedding lookup");
  add_common(lookup, true);
  lookup->add_option("--strategy", o.strategy, "onehot, digit_bsgs or coded_helut")
      ->check(CLI::IsMember({"onehot", "digit_bsgs", "coded_helut"}));
  auto* compare = app.add_subcommand("compare", "compare coded lookup against digit BSGS");
  add_common(compare, true);
  auto* dlrm = app.add_subcommand("dlrm", "encrypted DLRM inference");
  add_common(dlrm, true);
  auto* llm = app.add_subcommand("llm", "LLM embedding scenarios");
  add_common(llm, true);
  auto* calibrate = app.add_subcommand("calibrate", "derive a cost table from a reference breakdown");
  add_common(calibrate, false);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  for (auto* sub : {lookup, compare, dlrm, llm, calibrate}) {
    if (sub->parsed() && sub->count("--seed") > 0) o.seed = seed;
  }

  try {
    if (lookup->parsed()) return cmd_lookup(o, out);
    if (compare->parsed()) return cmd_compare(o, out);
    if (dlrm->parsed()) return cmd_dlrm(o, out);
    if (llm->parsed()) return cmd_llm(o, out);
    if (calibrate->parsed()) return cmd_calibrate(o, out);
  } catch (const LevelError& e) {
    err << "level error: " << e.what() << "\n";
    return kLevelError;
  } catch (const CapacityError& e) {
    err << "capacity error: " << e.what() << "\n";
    return kCapacityError;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace helut::cli
