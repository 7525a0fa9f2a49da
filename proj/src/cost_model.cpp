// SPDX-License-Identifier: Apache-2.0
#include "helut/cost_model.hpp"

#include <Eigen/Dense>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>

#include "helut/config.hpp"
#include "helut/errors.hpp"

#ifndef HELUT_DATA_DIR
#define HELUT_DATA_DIR "data"
#endif

namespace helut {

namespace {

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

constexpr double kMiB = 1024.0 * 1024.0;

}  // namespace

bool CostTable::has_op(const std::string& op, int level) const {
  auto it = ops.find(op);
  return it != ops.end() && it->second.count(level) > 0;
}

namespace {

// Entry at `level`, else the nearest lower level.
std::optional<double> lookup_level(const std::map<int, double>& levels, int level) {
  auto it = levels.upper_bound(level);
  if (it == levels.begin()) return std::nullopt;
  return std::prev(it)->second;
}

}  // namespace

double CostTable::op_seconds(OpKind kind, int level, bool hoisted) const {
  const std::string base(to_string(kind));
  if (hoisted && kind == OpKind::rotate) {
    auto h = ops.find("rotate_hoisted");
    if (h != ops.end()) {
      if (auto v = lookup_level(h->second, level)) return *v;
    }
  }
  auto it = ops.find(base);
  if (it != ops.end()) {
    if (auto v = lookup_level(it->second, level)) return *v;
  }
  throw ParameterError("cost table '" + name + "' has no entry for " + base + " at or below level " +
                       std::to_string(level));
}

double CostReport::phase_seconds(const std::string& phase) const {
  for (const auto& p : phases) {
    if (p.phase == phase) return p.seconds;
  }
  return 0.0;
}

std::vector<Upload> uploads_from_ledger(const OpLedger& ledger) {
  std::map<int, std::uint64_t> by_level;
  for (const auto& e : ledger.entries()) {
    if (e.kind == OpKind::encrypt_upload) by_level[e.level] += e.count;
  }
  std::vector<Upload> out;
  for (const auto& [level, n] : by_level) out.push_back(Upload{n, level, ObjectKind::ciphertext});
  return out;
}

double upload_seconds(const Upload& u, const VmParams& params, const CostTable& table) {
  if (table.upload_mib_s <= 0) throw ParameterError("upload bandwidth must be positive");
  const double bytes = static_cast<double>(object_size_bytes(params, u.level, u.kind)) *
                       static_cast<double>(u.count);
  return bytes / kMiB / table.upload_mib_s;
}

CostReport estimate(const OpLedger& ledger, std::span<const Upload> uploads,
                    const VmParams& params, const CostTable& table) {
  CostReport report;
  report.table = table.name;
  std::vector<std::string> order;
  std::map<std::string, PhaseCost> by_phase;
  auto phase = [&](const std::string& name) -> PhaseCost& {
    auto it = by_phase.find(name);
    if (it == by_phase.end()) {
      order.push_back(name);
      PhaseCost pc;
      pc.phase = name;
      it = by_phase.emplace(name, pc).first;
    }
    return it->second;
  };

  if (!uploads.empty()) {
    PhaseCost& up = phase("upload");
    for (const auto& u : uploads) {
      up.seconds += upload_seconds(u, params, table);
      up.invocations += u.count;
    }
    report.upload_seconds = up.seconds;
  }

  for (const auto& e : ledger.entries()) {
    if (e.kind == OpKind::encrypt_upload) continue;
    const bool boot = e.kind == OpKind::bootstrap;
    PhaseCost& pc = phase(boot ? std::string("bootstrap") : e.phase);
    pc.ops[e.kind] += e.count;
    if (boot) {
      pc.seconds += table.bootstrap_s * static_cast<double>(e.count);
      pc.invocations += e.count;
      report.bootstraps += e.count;
    } else if (!table.composites.count(pc.phase)) {
      pc.seconds += table.op_seconds(e.kind, e.level, e.hoisted) * static_cast<double>(e.count);
    }
  }

  for (const auto& [name, seconds] : table.composites) {
    auto inv = ledger.phase_invocations().find(name);
    if (inv == ledger.phase_invocations().end()) continue;
    PhaseCost& pc = phase(name);
    pc.composite = true;
    pc.invocations = inv->second;
    pc.seconds = seconds * static_cast<double>(inv->second);
  }

  for (const auto& name : order) {
    PhaseCost& pc = by_phase.at(name);
    if (pc.invocations == 0) {
      auto inv = ledger.phase_invocations().find(name);
      if (inv != ledger.phase_invocations().end()) pc.invocations = inv->second;
    }
    report.phases.push_back(pc);
    report.total_seconds += by_phase.at(name).seconds;
  }
  report.bootstrap_seconds = report.phase_seconds("bootstrap");
  report.rotations = ledger.count(OpKind::rotate);
  report.multiplies = ledger.count(OpKind::pt_mul) + ledger.count(OpKind::ct_mul);
  return report;
}

CostTable calibrate_from_breakdown(std::span<const BreakdownRow> rows,
                                   const CalibrationOptions& options) {
  CostTable table;
  table.name = options.name;
  std::vector<OpKind> kinds;
  std::vector<const BreakdownRow*> op_rows;

  for (const auto& row : rows) {
    if (row.seconds < 0) throw CalibrationError("row '" + row.phase + "' has negative time");
    if (row.phase == "upload") {
      if (row.upload_bytes == 0 || row.seconds <= 0) {
        throw CalibrationError("upload row needs positive bytes and time");
      }
      table.upload_mib_s = static_cast<double>(row.upload_bytes) / kMiB / row.seconds;
    } else if (row.phase == "bootstrap") {
      std::uint64_t count = 0;
      for (const auto& e : row.ops) {
        if (e.kind == OpKind::bootstrap) count += e.count;
      }
      if (row.ops.empty()) count = row.invocations;
      if (count == 0) throw CalibrationError("bootstrap row has zero bootstraps");
      table.bootstrap_s = row.seconds / static_cast<double>(count);
    } else if (row.composite && !row.dominant) {
      if (row.invocations == 0) throw CalibrationError("composite row '" + row.phase + "' never runs");
      table.composites[row.phase] = row.seconds / static_cast<double>(row.invocations);
    } else {
      if (row.composite) {
        if (row.invocations == 0) {
          throw CalibrationError("composite row '" + row.phase + "' never runs");
        }
        table.composites[row.phase] = row.seconds / static_cast<double>(row.invocations);
      }
      if (!row.dominant) {
        throw CalibrationError("row '" + row.phase + "' has neither a dominant kind nor a composite flag");
      }
      if (std::find(kinds.begin(), kinds.end(), *row.dominant) == kinds.end()) {
        kinds.push_back(*row.dominant);
      }
      op_rows.push_back(&row);
    }
  }

  Eigen::VectorXd coeff = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kinds.size()));
  if (!op_rows.empty()) {
    const auto m = static_cast<Eigen::Index>(op_rows.size());
    const auto k = static_cast<Eigen::Index>(kinds.size());
    if (m < k) throw CalibrationError("fewer op rows than dominant kinds");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, k);
    Eigen::VectorXd b(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const BreakdownRow& row = *op_rows[static_cast<std::size_t>(r)];
      b(r) = row.seconds;
      for (const auto& e : row.ops) {
        auto it = std::find(kinds.begin(), kinds.end(), e.kind);
        if (it == kinds.end()) continue;
        a(r, it - kinds.begin()) += static_cast<double>(e.count) * (e.level + 1);
      }
      const auto d = std::find(kinds.begin(), kinds.end(), *row.dominant) - kinds.begin();
      if (a(r, d) <= 0) {
        throw CalibrationError("row '" + row.phase + "' has no " +
                               std::string(to_string(*row.dominant)) + " ops");
      }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < k) throw CalibrationError("breakdown rows do not determine every coefficient");
    coeff = qr.solve(b);
    for (Eigen::Index i = 0; i < k; ++i) {
      if (coeff(i) < 0) {
        throw CalibrationError("negative latency for " +
                               std::string(to_string(kinds[static_cast<std::size_t>(i)])));
      }
    }
  }

  for (OpKind kind : {OpKind::pt_add, OpKind::ct_add, OpKind::pt_mul, OpKind::ct_mul,
                      OpKind::rotate}) {
    auto it = std::find(kinds.begin(), kinds.end(), kind);
    const double c = it == kinds.end() ? 0.0 : coeff(it - kinds.begin());
    for (int level = 0; level <= options.max_level; ++level) {
      table.set(std::string(to_string(kind)), level, c * (level + 1));
    }
  }
  return table;
}

std::string cost_table_to_json(const CostTable& table) {
  json j;
  j["name"] = table.name;
  j["upload_mib_s"] = table.upload_mib_s;
  j["bootstrap_s"] = table.bootstrap_s;
  json ops = json::array();
  for (const auto& [op, levels] : table.ops) {
    for (const auto& [level, seconds] : levels) {
      ops.push_back(json{{"op", op}, {"level", level}, {"seconds", seconds}});
    }
  }
  j["ops"] = ops;
  if (!table.composites.empty()) {
    json comp = json::array();
    for (const auto& [phase, seconds] : table.composites) {
      comp.push_back(json{{"phase", phase}, {"seconds", seconds}});
    }
    j["composites"] = comp;
  }
  return j.dump(2) + "\n";
}

CostTable cost_table_from_json(const std::string& text, const std::string& source) {
  ConfigNode root(parse_json_text(text, source));
  CostTable t;
  t.name = root.at("name").as_string();
  t.upload_mib_s = root.get_double("upload_mib_s", 40.0);
  if (t.upload_mib_s <= 0) root.at("upload_mib_s").fail("upload bandwidth must be positive");
  t.bootstrap_s = root.get_double("bootstrap_s", 0.0);
  if (t.bootstrap_s < 0) root.at("bootstrap_s").fail("bootstrap latency must be non-negative");
  ConfigNode ops = root.at("ops");
  for (std::size_t i = 0; i < ops.size(); ++i) {
    ConfigNode e = ops.at(i);
    const std::string op = e.at("op").as_string();
    if (op != "rotate_hoisted") {
      try {
        op_kind_from_string(op);
      } catch (const ParameterError&) {
        e.at("op").fail("unknown op '" + op + "'");
      }
    }
    const auto level = e.at("level").as_int();
    const double seconds = e.at("seconds").as_double();
    if (seconds < 0) e.at("seconds").fail("latency must be non-negative");
    t.set(op, static_cast<int>(level), seconds);
  }
  if (root.has("composites")) {
    ConfigNode comp = root.at("composites");
    for (std::size_t i = 0; i < comp.size(); ++i) {
      t.composites[comp.at(i).at("phase").as_string()] = comp.at(i).at("seconds").as_double();
    }
  }
  return t;
}

CostTable load_cost_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open cost table", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return cost_table_from_json(ss.str(), path.string());
}

void save_cost_table(const CostTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write cost table", path.string());
  out << cost_table_to_json(table);
}

std::filesystem::path resolve_cost_table(const std::string& name_or_path) {
  std::filesystem::path direct(name_or_path);
  if (std::filesystem::exists(direct) && std::filesystem::is_regular_file(direct)) return direct;
  std::vector<std::filesystem::path> candidates;
  if (const char* env = std::getenv("HELUT_COST_DIR"); env && *env) {
    candidates.push_back(std::filesystem::path(env) / (name_or_path + ".json"));
  }
  candidates.push_back(std::filesystem::path(HELUT_DATA_DIR) / "cost_tables" /
                       (name_or_path + ".json"));
  std::string tried;
  for (const auto& c : candidates) {
    if (std::filesystem::exists(c)) return c;
    tried += " " + c.string();
  }
  throw ConfigError("cost table '" + name_or_path + "' not found; tried" + tried);
}

std::string cost_report_csv(const CostReport& report) {
  std::ostringstream out;
  out << "phase,seconds,invocations";
  for (OpKind k : kAllOpKinds) {
    if (k != OpKind::encrypt_upload) out << ',' << to_string(k);
  }
  out << '\n';
  for (const auto& p : report.phases) {
    out << p.phase << ',' << fmt_num(p.seconds) << ',' << p.invocations;
    for (OpKind k : kAllOpKinds) {
      if (k == OpKind::encrypt_upload) continue;
      auto it = p.ops.find(k);
      out << ',' << (it == p.ops.end() ? 0 : it->second);
    }
    out << '\n';
  }
  out << "total," << fmt_num(report.total_seconds) << ",,,,,,," << report.bootstraps << '\n';
  return out.str();
}

std::string cost_report_json(const CostReport& report) {
  json j;
  j["table"] = report.table;
  j["total_seconds"] = report.total_seconds;
  j["upload_seconds"] = report.upload_seconds;
  j["bootstrap_seconds"] = report.bootstrap_seconds;
  j["bootstraps"] = report.bootstraps;
  j["rotations"] = report.rotations;
  j["multiplies"] = report.multiplies;
  json phases = json::array();
  for (const auto& p : report.phases) {
    json ops = json::object();
    for (const auto& [k, n] : p.ops) ops[std::string(to_string(k))] = n;
    phases.push_back(json{{"phase", p.phase},
                          {"seconds", p.seconds},
                          {"invocations", p.invocations},
                          {"composite", p.composite},
                          {"ops", ops}});
  }
  j["phases"] = phases;
  return j.dump(2) + "\n";
}

std::string ledger_json(const OpLedger& ledger) {
  json j;
  json entries = json::array();
  for (const auto& e : ledger.entries()) {
    entries.push_back(json{{"kind", std::string(to_string(e.kind))},
                           {"level", e.level},
                           {"offset", e.offset},
                           {"count", e.count},
                           {"phase", e.phase},
                           {"hoisted", e.hoisted}});
  }
  json counters = json::object();
  for (const auto& [k, n] : ledger.counters()) counters[std::string(to_string(k))] = n;
  j["entries"] = entries;
  j["counters"] = counters;
  j["level_drops"] = ledger.level_drops();
  j["warnings"] = ledger.warnings();
  j["phase_invocations"] = ledger.phase_invocations();
  return j.dump(2) + "\n";
}

}  // namespace helut
