// SPDX-License-Identifier: Apache-2.0
#include "helut/experiments.hpp"

#include <cstdio>
#include <limits>
#include <sstream>

#include "helut/errors.hpp"
#include "helut/model_io.hpp"

namespace helut {

namespace {

int levels_consumed(const OpLedger& ledger, const VmParams& params, int upload_level,
                    int final_level) {
  int consumed = upload_level - final_level;
  for (const auto& e : ledger.entries()) {
    if (e.kind == OpKind::bootstrap) {
      consumed += static_cast<int>(e.count) * (params.boot_level - e.level);
    }
  }
  return consumed;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<BreakdownRow> parse_rows(const ConfigNode& list) {
  std::vector<BreakdownRow> rows;
  for (std::size_t i = 0; i < list.size(); ++i) {
    ConfigNode r = list.at(i);
    BreakdownRow row;
    row.phase = r.at("phase").as_string();
    row.seconds = r.at("seconds").as_double();
    if (row.seconds < 0) r.at("seconds").fail("phase time must be non-negative");
    row.composite = r.get_bool("composite", false);
    if (r.has("dominant")) {
      try {
        row.dominant = op_kind_from_string(r.at("dominant").as_string());
      } catch (const ParameterError& e) {
        r.at("dominant").fail(e.what());
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void attach(std::vector<BreakdownRow>& rows, const PipelineRun& run, const VmParams& params) {
  for (auto& row : rows) {
    row.ops.clear();
    if (row.phase == "upload") {
      row.upload_bytes = 0;
      for (const auto& u : run.uploads) {
        row.upload_bytes += static_cast<std::uint64_t>(object_size_bytes(params, u.level, u.kind)) * u.count;
      }
      continue;
    }
    for (const auto& e : run.ledger.entries()) {
      const bool match = row.phase == "bootstrap" ? e.kind == OpKind::bootstrap
                                                  : e.phase == row.phase && e.kind != OpKind::bootstrap;
      if (match) row.ops.push_back(e);
    }
    auto inv = run.ledger.phase_invocations().find(row.phase);
    row.invocations = inv == run.ledger.phase_invocations().end() ? 0 : inv->second;
    if (row.phase == "bootstrap") row.invocations = run.ledger.count(OpKind::bootstrap);
  }
}

}  // namespace

CompareSetting parse_compare_setting(const ConfigNode& node) {
  CompareSetting s;
  s.base = static_cast<int>(node.get_int("p", s.base));
  if (s.base < 2) node.at("p").fail("base must be at least 2");
  s.digits = static_cast<int>(node.get_int("digits", s.digits));
  if (s.digits < 1) node.at("digits").fail("digit count must be positive");
  if (node.has("d") && !node.at("d").is_array()) {
    s.d = static_cast<int>(node.at("d").as_int());
    if (s.d < 1) node.at("d").fail("embedding width must be positive");
  }
  if (node.has("vm")) s.params = parse_vm_params(node.at("vm"));
  s.upload_level = static_cast<int>(node.get_int("upload_level", s.upload_level));
  if (s.upload_level < s.params.min_level || s.upload_level > s.params.max_level) {
    node.at("upload_level").fail("upload level outside [l_min, L]");
  }
  if (node.has("indicator")) {
    ConfigNode ind = node.at("indicator");
    s.indicator.r = static_cast<int>(ind.get_int("r", s.indicator.r));
    s.indicator.s = static_cast<int>(ind.get_int("s", s.indicator.s));
    if (s.indicator.r < 0 || s.indicator.s < 0) ind.fail("r and s must be non-negative");
  }
  if (node.has("layout")) {
    try {
      s.layout = diagonal_layout_from_string(node.at("layout").as_string());
    } catch (const ParameterError& e) {
      node.at("layout").fail(e.what());
    }
  }
  return s;
}

CodedTableStack compare_stack(const CompareSetting& s) {
  CodedTableStack stack;
  stack.parent_id = "table";
  stack.base = s.base;
  stack.digits = s.digits;
  stack.d = s.d;
  std::int64_t k = 1;
  for (int t = 0; t < s.digits; ++t) {
    if (k > std::numeric_limits<std::int64_t>::max() / s.base) {
      k = std::numeric_limits<std::int64_t>::max();
      break;
    }
    k *= s.base;
  }
  stack.k = k;
  return stack;
}

PipelineRun run_coded_pipeline(Vm& vm, const CodedTableStack& stack,
                               std::span<const std::int64_t> tokens, const CodedLookupOptions& options,
                               int level) {
  CipherVec ct = [&] {
    PhaseScope ph(vm.ledger(), "upload");
    if (!vm.functional()) return vm.encrypt_placeholder(level);
    return vm.encrypt(encode_digit_tokens(tokens, stack.base, stack.digits, vm.slots()), level);
  }();
  Bootstrapper boot(vm);
  PipelineRun run;
  run.outputs = coded_helut_lookup(vm, boot, ct, stack, options);
  run.ledger = vm.ledger();
  run.uploads = uploads_from_ledger(run.ledger);
  run.levels_consumed =
      levels_consumed(run.ledger, vm.params(), level, run.outputs.front().level());
  return run;
}

PipelineRun run_digit_pipeline(Vm& vm, const PackedEmbeddingSet& packed,
                               const Eigen::VectorXd& client, int level, MatvecAlgo algo) {
  std::vector<CipherVec> inputs;
  {
    PhaseScope ph(vm.ledger(), "upload");
    inputs = vm.functional() ? encrypt_chunks(vm, client, level)
                             : placeholder_chunks(vm, packed.layout().total_slots(), level);
  }
  PipelineRun run;
  {
    PhaseScope ph(vm.ledger(), "bsgs");
    run.outputs = lookup_encrypted(vm, packed, inputs, algo);
  }
  run.ledger = vm.ledger();
  run.uploads = uploads_from_ledger(run.ledger);
  run.levels_consumed =
      levels_consumed(run.ledger, vm.params(), level, run.outputs.front().level());
  return run;
}

ComparePoint compare_point(const CompareSetting& s, const CostTable& table,
                           PipelineRun* baseline_run, PipelineRun* ours_run) {
  const CodedTableStack stack = compare_stack(s);
  ComparePoint pt;
  pt.d = s.d;

  Vm vb(s.params, ExecMode::accounting);
  CodedLookupOptions opts;
  opts.indicator = s.indicator;
  PipelineRun base = run_coded_pipeline(vb, stack, {}, opts, s.upload_level);
  pt.baseline = estimate(base.ledger, base.uploads, s.params, table);
  pt.baseline_rotations = base.ledger.count(OpKind::rotate);
  pt.baseline_levels = base.levels_consumed;

  Vm vo(s.params, ExecMode::accounting);
  PackedEmbeddingSet packed = pack_block_diagonal({stack}, s.params, s.layout);
  PipelineRun ours = run_digit_pipeline(vo, packed, Eigen::VectorXd(), s.upload_level);
  pt.ours = estimate(ours.ledger, ours.uploads, s.params, table);
  pt.ours_rotations = ours.ledger.count(OpKind::rotate);
  pt.ours_levels = ours.levels_consumed;

  if (baseline_run) *baseline_run = std::move(base);
  if (ours_run) *ours_run = std::move(ours);
  return pt;
}

std::string compare_csv_header() {
  return "d,baseline_s,ours_s,speedup,baseline_rotations,ours_rotations,baseline_levels,"
         "ours_levels\n";
}

std::string compare_csv_row(const ComparePoint& p) {
  std::ostringstream out;
  out << p.d << ',' << fmt(p.baseline.total_seconds) << ',' << fmt(p.ours.total_seconds) << ','
      << fmt(p.speedup()) << ',' << p.baseline_rotations << ',' << p.ours_rotations << ','
      << p.baseline_levels << ',' << p.ours_levels << '\n';
  return out.str();
}

ReferenceBreakdown load_reference_breakdown(const std::filesystem::path& path) {
  ConfigNode root(load_json_file(path));
  ReferenceBreakdown ref;
  ref.name = root.get_string("name", ref.name);
  ref.max_level = static_cast<int>(root.get_int("max_level", ref.max_level));
  ref.setting = parse_compare_setting(root.at("setting"));
  ref.baseline = parse_rows(root.at("baseline"));
  ref.ours = parse_rows(root.at("ours"));
  attach_ledgers(ref);
  return ref;
}

void attach_ledgers(ReferenceBreakdown& ref) {
  PipelineRun base, ours;
  const CompareSetting& s = ref.setting;
  {
    Vm vb(s.params, ExecMode::accounting);
    CodedLookupOptions opts;
    opts.indicator = s.indicator;
    base = run_coded_pipeline(vb, compare_stack(s), {}, opts, s.upload_level);
  }
  {
    Vm vo(s.params, ExecMode::accounting);
    PackedEmbeddingSet packed = pack_block_diagonal({compare_stack(s)}, s.params, s.layout);
    ours = run_digit_pipeline(vo, packed, Eigen::VectorXd(), s.upload_level);
  }
  attach(ref.baseline, base, s.params);
  attach(ref.ours, ours, s.params);
}

CostTable calibrate_reference(const ReferenceBreakdown& ref) {
  std::vector<BreakdownRow> rows = ref.baseline;
  rows.insert(rows.end(), ref.ours.begin(), ref.ours.end());
  CalibrationOptions opts;
  opts.name = ref.name;
  opts.max_level = ref.max_level;
  return calibrate_from_breakdown(rows, opts);
}

std::filesystem::path default_reference_breakdown() {
  return std::filesystem::path(HELUT_DATA_DIR) / "calibration" / "reference_breakdown.json";
}

}  // namespace helut
