#pragma once

#include <charconv>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "oracle.hpp"
#include "services/echo_driver.hpp"
#include "services/syscall_service.hpp"
#include "sim_devices.hpp"
#include "snapshot.hpp"
#include "system.hpp"

namespace fk {

// Line-oriented scenario files, picked for diff-friendliness:
//
//   [config]            key value pairs (frame_size, frame_count, region,
//                       cpus, scheduler, frame_allocator, kind, label,
//                       device, authorize, strict-guard, io-mem-bytes)
//   [actions]           one action per line, verb then arguments
//
// `#` starts a comment. Expect clauses reference observable state only;
// a run exits nonzero iff an expect clause fails (or a strict-mode guard
// violation fires). Action failures are logged and recorded as the "last
// error" so scenarios can assert on them.

struct ScenarioAction {
  std::size_t line = 0;
  std::vector<std::string> args;
};

struct ScenarioResult {
  std::vector<std::string> log;
  std::size_t expects = 0;
  std::size_t failures = 0;
  bool fatal_guard = false;

  int exit_code() const { return (failures == 0 && !fatal_guard) ? 0 : 1; }
};

// Captures the final memory state of a run for the snapshot tools.
struct SnapshotProbe {
  std::vector<std::uint8_t> bytes;
};

class Scenario {
 public:
  static Result<Scenario> parse(std::string_view text) {
    Scenario sc;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    enum class Section { none, config, actions } section = Section::none;
    while (std::getline(in, raw)) {
      ++line_no;
      if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
      auto args = tokenize(raw);
      if (args.empty()) continue;
      if (args[0] == "[config]") {
        section = Section::config;
        continue;
      }
      if (args[0] == "[actions]") {
        section = Section::actions;
        continue;
      }
      if (args[0].front() == '[') {
        return parse_fail(line_no, 1, "unknown section " + args[0]);
      }
      switch (section) {
        case Section::none:
          return parse_fail(line_no, 1, "content before any section");
        case Section::config:
          if (Status st = sc.apply_config(args, line_no); !st.ok()) return st.error();
          break;
        case Section::actions:
          sc.actions_.push_back(ScenarioAction{line_no, std::move(args)});
          break;
      }
    }
    return sc;
  }

  ScenarioResult run(std::uint64_t seed, bool attach_oracle = false,
                     OracleReport* oracle_out = nullptr,
                     SnapshotProbe* snapshot_out = nullptr) const;

  const SystemConfig& config() const { return cfg_; }
  void force_strict_guard() { cfg_.strict_guard = true; }

 private:
  struct KindDecl {
    std::string name;
    std::uint32_t payload = 0;
    bool untyped = true;
  };
  struct LabelDecl {
    IoKind kind;
    std::uint64_t start, len;
    Sensitivity s;
  };
  struct DeviceDecl {
    std::string name;
    std::uint64_t window;
    std::uint32_t vector = 0;
    bool has_vector = false;
  };
  struct AuthDecl {
    std::string dev;
    std::uint32_t vector;
  };

  static Error parse_fail(std::size_t line, std::size_t col, const std::string& why) {
    return Error{Errc::parse_error,
                 "line " + std::to_string(line) + ":" + std::to_string(col) + ": " + why};
  }

  static std::vector<std::string> tokenize(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
  }

  static bool parse_u64(const std::string& s, std::uint64_t& out) {
    std::string_view v = s;
    int base = 10;
    if (v.starts_with("0x") || v.starts_with("0X")) {
      v.remove_prefix(2);
      base = 16;
    }
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out, base);
    return ec == std::errc{} && p == v.data() + v.size();
  }

  Status apply_config(const std::vector<std::string>& a, std::size_t line) {
    auto need = [&](std::size_t n) -> Status {
      if (a.size() != n) return parse_fail(line, 1, a[0] + " expects " + std::to_string(n - 1) +
                                                        " arguments");
      return ok_status();
    };
    std::uint64_t v = 0;
    if (a[0] == "frame_size") {
      if (Status st = need(2); !st.ok()) return st;
      if (!parse_u64(a[1], v)) return parse_fail(line, 2, "bad number");
      cfg_.mem.frame_size = v;
    } else if (a[0] == "frame_count") {
      if (Status st = need(2); !st.ok()) return st;
      if (!parse_u64(a[1], v)) return parse_fail(line, 2, "bad number");
      cfg_.mem.frame_count = v;
    } else if (a[0] == "region") {
      if (Status st = need(3); !st.ok()) return st;
      std::uint64_t addr, len;
      if (!parse_u64(a[1], addr) || !parse_u64(a[2], len)) {
        return parse_fail(line, 2, "bad number");
      }
      cfg_.mem.usable.push_back(Region{PhysAddr{addr}, len});
    } else if (a[0] == "cpus") {
      if (Status st = need(2); !st.ok()) return st;
      if (!parse_u64(a[1], v)) return parse_fail(line, 2, "bad number");
      cfg_.cpus = static_cast<std::uint32_t>(v);
    } else if (a[0] == "scheduler") {
      if (Status st = need(2); !st.ok()) return st;
      cfg_.scheduler = a[1];
    } else if (a[0] == "frame_allocator") {
      if (Status st = need(2); !st.ok()) return st;
      cfg_.frame_allocator = a[1];
    } else if (a[0] == "strict-guard") {
      if (Status st = need(2); !st.ok()) return st;
      cfg_.strict_guard = a[1] == "on";
    } else if (a[0] == "kind") {
      if (Status st = need(4); !st.ok()) return st;
      if (!parse_u64(a[2], v)) return parse_fail(line, 3, "bad payload size");
      kinds_.push_back(KindDecl{a[1], static_cast<std::uint32_t>(v), a[3] == "untyped"});
    } else if (a[0] == "label") {
      if (Status st = need(5); !st.ok()) return st;
      LabelDecl l;
      if (a[1] == "mem") l.kind = IoKind::mem;
      else if (a[1] == "port") l.kind = IoKind::port;
      else return parse_fail(line, 2, "label kind must be mem|port");
      if (!parse_u64(a[2], l.start) || !parse_u64(a[3], l.len)) {
        return parse_fail(line, 3, "bad number");
      }
      if (a[4] == "sensitive") l.s = Sensitivity::sensitive;
      else if (a[4] == "insensitive") l.s = Sensitivity::insensitive;
      else return parse_fail(line, 5, "sensitivity must be sensitive|insensitive");
      labels_.push_back(l);
    } else if (a[0] == "device") {
      if (a.size() != 4 && a.size() != 5) return parse_fail(line, 1, "device echo NAME BASE [VECTOR]");
      if (a[1] != "echo") return parse_fail(line, 2, "only echo devices exist");
      DeviceDecl d;
      d.name = a[2];
      if (!parse_u64(a[3], d.window)) return parse_fail(line, 4, "bad window base");
      if (a.size() == 5) {
        if (!parse_u64(a[4], v)) return parse_fail(line, 5, "bad vector");
        d.vector = static_cast<std::uint32_t>(v);
        d.has_vector = true;
      }
      devices_.push_back(d);
    } else if (a[0] == "authorize") {
      if (Status st = need(3); !st.ok()) return st;
      if (!parse_u64(a[2], v)) return parse_fail(line, 3, "bad vector");
      auths_.push_back(AuthDecl{a[1], static_cast<std::uint32_t>(v)});
    } else if (a[0] == "io-mem-bytes") {
      if (Status st = need(2); !st.ok()) return st;
      if (!parse_u64(a[1], v)) return parse_fail(line, 2, "bad number");
      cfg_.io_mem_bytes = v;
    } else {
      return parse_fail(line, 1, "unknown config key " + a[0]);
    }
    return ok_status();
  }

  SystemConfig cfg_;
  std::vector<KindDecl> kinds_;
  std::vector<LabelDecl> labels_;
  std::vector<DeviceDecl> devices_;
  std::vector<AuthDecl> auths_;
  std::vector<ScenarioAction> actions_;

  friend class ScenarioRunner;
};

// Interprets a parsed scenario against a fresh System.
class ScenarioRunner {
 public:
  ScenarioRunner(const Scenario& sc, std::uint64_t seed) : sc_(sc), seed_(seed) {}

  ScenarioResult run(bool attach_oracle, OracleReport* oracle_out,
                     SnapshotProbe* snapshot_out = nullptr) {
    ScenarioResult res;
    auto sys = System::create(sc_.cfg_);
    if (!sys.ok()) {
      res.log.push_back("[fatal] system: " + sys.error().to_string());
      res.failures += 1;
      return res;
    }
    sys_ = sys.take();
    res.log.push_back("[seed] " + std::to_string(seed_));

    TraceRecorder recorder;
    if (attach_oracle) sys_->map().attach_sink(&recorder);

    for (const auto& k : sc_.kinds_) {
      auto id = sys_->map().register_meta_kind(k.name, k.payload, k.untyped);
      if (!id.ok()) {
        res.log.push_back("[fatal] kind " + k.name + ": " + id.error().to_string());
        res.failures += 1;
        return res;
      }
      kinds_[k.name] = id.value();
    }
    for (const auto& l : sc_.labels_) {
      Status st = sys_->io().io_label(l.kind, l.start, l.len, l.s);
      if (!st.ok()) res.log.push_back("[error] label: " + st.error().to_string());
    }
    Status sealed = sys_->io().seal_labels();
    (void)sealed;
    for (const auto& d : sc_.devices_) {
      devices_[d.name] = std::make_unique<EchoDevice>(
          d.name, sys_->dma(), sys_->io(), d.window, d.has_vector ? &sys_->irq() : nullptr,
          d.vector);
      Status st = sys_->io().wire_device(d.window, EchoDevice::kWindowBytes,
                                         devices_[d.name].get());
      if (!st.ok()) res.log.push_back("[error] device " + d.name + ": " + st.error().to_string());
    }
    for (const auto& auth : sc_.auths_) {
      sys_->irq().authorize_device(auth.dev, auth.vector);
    }
    syscalls_ = std::make_unique<services::SyscallService>(sys_->sched());

    for (const auto& action : sc_.actions_) {
      execute(action, res);
      if (sys_->sched().fatal_guard_violation()) {
        res.fatal_guard = true;
        res.log.push_back("[fatal] guard violation in strict mode");
        break;
      }
    }

    if (attach_oracle) {
      sys_->map().detach_sink();
      OracleReport report = analyze_schedule(recorder.schedule());
      for (const Violation& v : recorder.flagged()) report.violations.push_back(v);
      res.log.push_back("[oracle] events " + std::to_string(recorder.schedule().size()) +
                        " violations " + std::to_string(report.violations.size()));
      if (oracle_out != nullptr) *oracle_out = std::move(report);
    }
    if (snapshot_out != nullptr) snapshot_out->bytes = snapshot_dump(sys_->map());
    return res;
  }

 private:
  // --- small helpers -----------------------------------------------------

  static bool parse_u64(const std::string& s, std::uint64_t& out) {
    std::string_view v = s;
    int base = 10;
    if (v.starts_with("0x") || v.starts_with("0X")) {
      v.remove_prefix(2);
      base = 16;
    }
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out, base);
    return ec == std::errc{} && p == v.data() + v.size();
  }

  static bool parse_i64(const std::string& s, std::int64_t& out) {
    bool neg = !s.empty() && s[0] == '-';
    std::uint64_t mag = 0;
    if (!parse_u64(neg ? s.substr(1) : s, mag)) return false;
    out = neg ? -static_cast<std::int64_t>(mag) : static_cast<std::int64_t>(mag);
    return true;
  }

  bool parse_cpu(const std::string& s, std::uint32_t& cpu) {
    std::uint64_t v = 0;
    std::string t = s;
    if (t.rfind("cpu", 0) == 0) t = t.substr(3);
    if (!parse_u64(t, v) || v >= sys_->sched().cpu_count()) return false;
    cpu = static_cast<std::uint32_t>(v);
    return true;
  }

  Result<std::uint16_t> kind_of(const std::string& name) {
    auto it = kinds_.find(name);
    if (it == kinds_.end()) return Error{Errc::unknown_kind, name};
    return it->second;
  }

  static Result<TaskScript> parse_script(const std::string& text) {
    TaskScript script;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t comma = text.find(',', pos);
      std::string tok = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
      pos = comma == std::string::npos ? text.size() : comma + 1;
      if (tok.rfind("run:", 0) == 0) {
        std::uint64_t n = 0;
        if (!parse_u64(tok.substr(4), n)) return Error{Errc::parse_error, "bad run ticks"};
        script.push_back(op_run(static_cast<std::uint32_t>(n)));
      } else if (tok == "yield") {
        script.push_back(op_yield());
      } else if (tok == "sleep") {
        script.push_back(op_sleep());
      } else if (tok == "exit") {
        script.push_back(op_exit());
      } else {
        return Error{Errc::parse_error, "bad script op " + tok};
      }
    }
    return script;
  }

  static Result<std::vector<UserOp>> parse_user_ops(const std::vector<std::string>& args,
                                                    std::size_t from) {
    std::vector<UserOp> ops;
    for (std::size_t i = from; i < args.size(); ++i) {
      const std::string& tok = args[i];
      std::vector<std::string> parts;
      std::size_t pos = 0;
      while (pos <= tok.size()) {
        std::size_t colon = tok.find(':', pos);
        parts.push_back(tok.substr(pos, colon == std::string::npos ? colon : colon - pos));
        if (colon == std::string::npos) break;
        pos = colon + 1;
      }
      std::uint64_t v0 = 0;
      if (parts[0] == "st" && parts.size() == 3) {
        std::vector<std::uint8_t> bytes;
        if (!parse_u64(parts[1], v0) || !parse_hex(parts[2], bytes)) {
          return Error{Errc::parse_error, "bad store op " + tok};
        }
        ops.push_back(uop_store(v0, std::move(bytes)));
      } else if (parts[0] == "ld" && parts.size() == 3) {
        std::uint64_t len = 0;
        if (!parse_u64(parts[1], v0) || !parse_u64(parts[2], len)) {
          return Error{Errc::parse_error, "bad load op " + tok};
        }
        ops.push_back(uop_load(v0, len));
      } else if (parts[0] == "sys" && parts.size() >= 2 && parts.size() <= 5) {
        std::array<std::uint64_t, 3> a{};
        if (!parse_u64(parts[1], v0)) return Error{Errc::parse_error, "bad sysno " + tok};
        for (std::size_t k = 2; k < parts.size(); ++k) {
          if (!parse_u64(parts[k], a[k - 2])) return Error{Errc::parse_error, "bad arg " + tok};
        }
        ops.push_back(uop_syscall(v0, a[0], a[1], a[2]));
      } else if (parts[0] == "exit") {
        ops.push_back(uop_exit());
      } else {
        return Error{Errc::parse_error, "bad user op " + tok};
      }
    }
    return ops;
  }

  void note_error(ScenarioResult& res, const ScenarioAction& act, const Error& err) {
    last_error_ = err;
    res.log.push_back("[error] line " + std::to_string(act.line) + " " + act.args[0] + ": " +
                      err.to_string());
  }

  void note_ok(ScenarioResult& res, const ScenarioAction& act, const std::string& extra = {}) {
    std::string msg = "[ok] " + act.args[0];
    for (std::size_t i = 1; i < act.args.size(); ++i) msg += " " + act.args[i];
    if (!extra.empty()) msg += " -> " + extra;
    res.log.push_back(msg);
  }

  void expect_check(ScenarioResult& res, const ScenarioAction& act, bool pass,
                    const std::string& actual) {
    res.expects += 1;
    std::string msg = "[expect]";
    for (std::size_t i = 1; i < act.args.size(); ++i) msg += " " + act.args[i];
    if (pass) {
      msg += ": pass";
    } else {
      msg += ": FAIL (actual " + actual + ")";
      res.failures += 1;
    }
    res.log.push_back(msg);
  }

  void bad_action(ScenarioResult& res, const ScenarioAction& act, const std::string& why) {
    res.failures += 1;
    res.log.push_back("[fail] line " + std::to_string(act.line) + ": " + why);
  }

  // --- the interpreter ----------------------------------------------------

  void execute(const ScenarioAction& act, ScenarioResult& res);
  void execute_expect(const ScenarioAction& act, ScenarioResult& res);

  const Scenario& sc_;
  std::uint64_t seed_;
  std::unique_ptr<System> sys_;
  std::map<std::string, std::uint16_t> kinds_;
  std::map<std::string, FrameHandle> frames_;
  std::map<std::string, SegmentHandle> segments_;
  std::map<std::string, VmSpace> spaces_;
  std::map<std::string, TaskId> tasks_;
  std::map<std::string, DmaMapping> mappings_;
  std::map<std::string, KernelStack> stacks_;
  std::map<std::string, std::unique_ptr<EchoDevice>> devices_;
  std::map<std::string, std::unique_ptr<services::EchoDriver>> drivers_;
  std::map<std::string, EchoDevice*> driver_devices_;
  std::map<std::string, IoHandle> io_handles_;
  std::map<std::string, std::vector<std::uint8_t>> responses_;
  std::vector<IrqLine> irq_lines_;
  std::vector<FrameHandle> fuzz_survivors_;
  std::unique_ptr<services::SyscallService> syscalls_;
  Error last_error_;
};

inline ScenarioResult Scenario::run(std::uint64_t seed, bool attach_oracle,
                                    OracleReport* oracle_out,
                                    SnapshotProbe* snapshot_out) const {
  ScenarioRunner runner(*this, seed);
  return runner.run(attach_oracle, oracle_out, snapshot_out);
}

inline void ScenarioRunner::execute(const ScenarioAction& act, ScenarioResult& res) {
  const auto& a = act.args;
  const std::string& verb = a[0];
  std::uint64_t v = 0;
  std::uint32_t cpu = 0;

  if (verb == "expect") {
    execute_expect(act, res);
    return;
  }

  if (verb == "claim" && a.size() == 4) {
    auto kind = kind_of(a[3]);
    if (!kind.ok()) return note_error(res, act, kind.error());
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad address");
    auto h = FrameHandle::from_unused(sys_->map(), PhysAddr{v}, kind.value());
    if (!h.ok()) return note_error(res, act, h.error());
    frames_.insert_or_assign(a[1], h.take());
    note_ok(res, act);
  } else if (verb == "segment" && a.size() == 5) {
    auto kind = kind_of(a[4]);
    if (!kind.ok()) return note_error(res, act, kind.error());
    std::uint64_t len = 0;
    if (!parse_u64(a[2], v) || !parse_u64(a[3], len)) return bad_action(res, act, "bad number");
    auto h = SegmentHandle::from_unused(sys_->map(), PhysAddr{v}, len, kind.value());
    if (!h.ok()) return note_error(res, act, h.error());
    segments_.insert_or_assign(a[1], h.take());
    note_ok(res, act);
  } else if (verb == "alloc" && a.size() == 4) {
    auto kind = kind_of(a[3]);
    if (!kind.ok()) return note_error(res, act, kind.error());
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad frame count");
    auto h = sys_->frames().alloc_frames(
        AllocLayout{v * sys_->map().frame_size(), sys_->map().frame_size()}, kind.value());
    if (!h.ok()) return note_error(res, act, h.error());
    note_ok(res, act, "addr " + std::to_string(h.value().addr().value));
    segments_.insert_or_assign(a[1], h.take());
  } else if (verb == "dup" && a.size() == 3) {
    auto src = frames_.find(a[1]);
    if (src == frames_.end()) return bad_action(res, act, "unknown handle " + a[1]);
    auto d = src->second.duplicate();
    if (!d.ok()) return note_error(res, act, d.error());
    frames_.insert_or_assign(a[2], d.take());
    note_ok(res, act);
  } else if (verb == "drop" && a.size() == 2) {
    if (frames_.erase(a[1]) == 0 && segments_.erase(a[1]) == 0) {
      return bad_action(res, act, "unknown handle " + a[1]);
    }
    note_ok(res, act);
  } else if (verb == "write" && a.size() == 4) {
    std::vector<std::uint8_t> bytes;
    if (!parse_u64(a[2], v) || !parse_hex(a[3], bytes)) return bad_action(res, act, "bad args");
    Status st = ok_status();
    if (auto f = frames_.find(a[1]); f != frames_.end()) st = f->second.write_bytes(v, bytes);
    else if (auto s = segments_.find(a[1]); s != segments_.end()) st = s->second.write_bytes(v, bytes);
    else return bad_action(res, act, "unknown handle " + a[1]);
    if (!st.ok()) return note_error(res, act, st.error());
    note_ok(res, act);
  } else if (verb == "read" && a.size() == 4) {
    std::uint64_t len = 0;
    if (!parse_u64(a[2], v) || !parse_u64(a[3], len)) return bad_action(res, act, "bad args");
    Result<std::vector<std::uint8_t>> r = Error{Errc::out_of_bounds};
    if (auto f = frames_.find(a[1]); f != frames_.end()) r = f->second.read_bytes(v, len);
    else if (auto s = segments_.find(a[1]); s != segments_.end()) r = s->second.read_bytes(v, len);
    else return bad_action(res, act, "unknown handle " + a[1]);
    if (!r.ok()) return note_error(res, act, r.error());
    note_ok(res, act, format_hex(r.value()));
  } else if (verb == "spawn" && a.size() >= 3) {
    auto script = parse_script(a[2]);
    if (!script.ok()) return bad_action(res, act, script.error().to_string());
    std::shared_ptr<void> attrs;
    if (a.size() == 4 && a[3].rfind("weight=", 0) == 0) {
      std::uint64_t w = 1;
      if (!parse_u64(a[3].substr(7), w)) return bad_action(res, act, "bad weight");
      attrs = std::make_shared<services::VruntimeAttrs>(services::VruntimeAttrs{w});
    }
    auto id = sys_->sched().spawn(script.take(), std::move(attrs));
    if (!id.ok()) return note_error(res, act, id.error());
    tasks_[a[1]] = id.value();
    note_ok(res, act, "task " + std::to_string(id.value()));
  } else if (verb == "step" && a.size() == 3) {
    std::uint64_t n = 0;
    if (!parse_cpu(a[1], cpu) || !parse_u64(a[2], n)) return bad_action(res, act, "bad args");
    for (std::uint64_t i = 0; i < n; ++i) sys_->sched().step(cpu);
    note_ok(res, act);
  } else if (verb == "tick" && (a.size() == 2 || a.size() == 3)) {
    std::uint64_t n = 1;
    if (!parse_cpu(a[1], cpu)) return bad_action(res, act, "bad cpu");
    if (a.size() == 3 && !parse_u64(a[2], n)) return bad_action(res, act, "bad count");
    for (std::uint64_t i = 0; i < n; ++i) sys_->sched().tick(cpu);
    note_ok(res, act);
  } else if (verb == "schedule" && a.size() == 2) {
    if (!parse_cpu(a[1], cpu)) return bad_action(res, act, "bad cpu");
    auto rep = sys_->sched().schedule(cpu);
    note_ok(res, act, rep.guard_violation ? "guard-violation" : "picked " +
                                                                    std::to_string(rep.to));
  } else if (verb == "yield" && a.size() == 2) {
    if (!parse_cpu(a[1], cpu)) return bad_action(res, act, "bad cpu");
    sys_->sched().yield(cpu);
    note_ok(res, act);
  } else if (verb == "sleep" && a.size() == 2) {
    if (!parse_cpu(a[1], cpu)) return bad_action(res, act, "bad cpu");
    sys_->sched().sleep_current(cpu);
    note_ok(res, act);
  } else if (verb == "wake" && a.size() == 2) {
    auto t = tasks_.find(a[1]);
    if (t == tasks_.end()) return bad_action(res, act, "unknown task " + a[1]);
    Status st = sys_->sched().wake(t->second);
    if (!st.ok()) return note_error(res, act, st.error());
    note_ok(res, act);
  } else if (verb == "space" && a.size() == 2) {
    spaces_.emplace(a[1], VmSpace(sys_->map()));
    note_ok(res, act);
  } else if (verb == "map" && a.size() == 5) {
    auto sp = spaces_.find(a[1]);
    if (sp == spaces_.end()) return bad_action(res, act, "unknown space " + a[1]);
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad vaddr");
    std::uint8_t perms = 0;
    for (char c : a[4]) {
      if (c == 'r') perms |= kPermR;
      else if (c == 'w') perms |= kPermW;
      else if (c == 'x') perms |= kPermX;
      else return bad_action(res, act, "bad perms");
    }
    Status st = ok_status();
    if (auto f = frames_.find(a[3]); f != frames_.end()) {
      st = sp->second.map_frame(v, f->second, perms);
    } else if (auto s = segments_.find(a[3]); s != segments_.end()) {
      st = sp->second.map_segment(v, s->second, perms);
    } else {
      return bad_action(res, act, "unknown handle " + a[3]);
    }
    if (!st.ok()) return note_error(res, act, st.error());
    note_ok(res, act);
  } else if (verb == "unmap" && a.size() == 3) {
    auto sp = spaces_.find(a[1]);
    if (sp == spaces_.end()) return bad_action(res, act, "unknown space " + a[1]);
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad vaddr");
    Status st = sp->second.unmap(v);
    if (!st.ok()) return note_error(res, act, st.error());
    note_ok(res, act);
  } else if (verb == "utask" && a.size() >= 4) {
    auto sp = spaces_.find(a[2]);
    if (sp == spaces_.end()) return bad_action(res, act, "unknown space " + a[2]);
    auto ops = parse_user_ops(a, 3);
    if (!ops.ok()) return bad_action(res, act, ops.error().to_string());
    auto id = syscalls_->add_user_task(sp->second, ops.take());
    if (!id.ok()) return note_error(res, act, id.error());
    tasks_[a[1]] = id.value();
    note_ok(res, act, "task " + std::to_string(id.value()));
  } else if (verb == "syscall-run" && a.size() == 2) {
    if (!parse_cpu(a[1], cpu)) return bad_action(res, act, "bad cpu");
    Status st = syscalls_->run(cpu);
    if (!st.ok()) return note_error(res, act, st.error());
    note_ok(res, act);
  } else if (verb == "stack" && a.size() == 3) {
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad frame count");
    auto st = KernelStack::create(sys_->frames(), v);
    if (!st.ok()) return note_error(res, act, st.error());
    stacks_.insert_or_assign(a[1], st.take());
    note_ok(res, act);
  } else if (verb == "stack-access" && a.size() == 3) {
    auto it = stacks_.find(a[1]);
    if (it == stacks_.end()) return bad_action(res, act, "unknown stack " + a[1]);
    std::int64_t off = 0;
    if (!parse_i64(a[2], off)) return bad_action(res, act, "bad offset");
    Status st = it->second.access(off);
    if (!st.ok()) return note_error(res, act, st.error());
    note_ok(res, act);
  } else if (verb == "dma-map" && a.size() == 5) {
    auto seg = segments_.find(a[2]);
    if (seg == segments_.end()) return bad_action(res, act, "unknown segment " + a[2]);
    DmaMode mode = a[3] == "coherent" ? DmaMode::coherent : DmaMode::stream;
    DmaDir dir = DmaDir::bidirectional;
    if (a[4] == "to-device") dir = DmaDir::to_device;
    else if (a[4] == "from-device") dir = DmaDir::from_device;
    auto m = sys_->dma().map(seg->second, mode, dir);
    if (!m.ok()) return note_error(res, act, m.error());
    note_ok(res, act, "dva " + std::to_string(m.value().dva()));
    mappings_.insert_or_assign(a[1], m.take());
  } else if (verb == "dma-unmap" && a.size() == 2) {
    auto m = mappings_.find(a[1]);
    if (m == mappings_.end()) return bad_action(res, act, "unknown mapping " + a[1]);
    m->second.unmap();
    note_ok(res, act);
  } else if (verb == "dma-write" && a.size() == 5) {
    // dma-write DEV MAPPING OFFSET HEX (device-originated traffic)
    auto m = mappings_.find(a[2]);
    if (m == mappings_.end()) return bad_action(res, act, "unknown mapping " + a[2]);
    std::vector<std::uint8_t> bytes;
    if (!parse_u64(a[3], v) || !parse_hex(a[4], bytes)) return bad_action(res, act, "bad args");
    Status st = sys_->dma().device_write(a[1], m->second.dva() + v, bytes);
    if (!st.ok()) return note_error(res, act, st.error());
    note_ok(res, act);
  } else if (verb == "fuzz-dma" && a.size() == 4) {
    std::uint64_t n = 0, seed = 0;
    if (!parse_u64(a[2], n) || !parse_u64(a[3], seed)) return bad_action(res, act, "bad args");
    SplitMix64 rng(seed ^ seed_);
    std::uint64_t blocked = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::vector<std::uint8_t> junk(1 + rng.bounded(64));
      for (auto& b : junk) b = static_cast<std::uint8_t>(rng.next());
      std::uint64_t dva = 0x1000'0000 + rng.bounded(1 << 20);
      if (!sys_->dma().device_write(a[1], dva, junk).ok()) ++blocked;
    }
    note_ok(res, act, std::to_string(blocked) + " blocked of " + std::to_string(n));
  } else if (verb == "driver" && a.size() == 4) {
    auto dev = devices_.find(a[2]);
    if (dev == devices_.end()) return bad_action(res, act, "unknown device " + a[2]);
    auto kind = kind_of(a[3]);
    if (!kind.ok()) return note_error(res, act, kind.error());
    auto driver = std::make_unique<services::EchoDriver>(sys_->frames(), sys_->dma(),
                                                         sys_->io(), kind.value());
    Status st = driver->init(dev->second->window_base(), EchoDevice::kWindowBytes);
    if (!st.ok()) return note_error(res, act, st.error());
    drivers_[a[1]] = std::move(driver);
    driver_devices_[a[1]] = dev->second.get();
    note_ok(res, act);
  } else if (verb == "request" && a.size() == 3) {
    auto drv = drivers_.find(a[1]);
    if (drv == drivers_.end()) return bad_action(res, act, "unknown driver " + a[1]);
    std::vector<std::uint8_t> payload;
    if (!parse_hex(a[2], payload)) return bad_action(res, act, "bad hex");
    EchoDevice* dev = driver_devices_[a[1]];
    auto resp = drv->second->request(payload, [dev] { dev->step(); });
    if (!resp.ok()) return note_error(res, act, resp.error());
    responses_[a[1]] = resp.value();
    note_ok(res, act, format_hex(resp.value()));
  } else if (verb == "irq-handler" && a.size() == 2) {
    if (!parse_u64(a[1], v)) return bad_action(res, act, "bad vector");
    auto line = sys_->irq().register_handler(static_cast<std::uint32_t>(v), [](std::uint32_t) {});
    if (!line.ok()) return note_error(res, act, line.error());
    irq_lines_.push_back(line.take());
    note_ok(res, act);
  } else if (verb == "raise" && a.size() == 3) {
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad vector");
    bool delivered = sys_->irq().raise(a[1], static_cast<std::uint32_t>(v));
    note_ok(res, act, delivered ? "delivered" : "dropped");
  } else if (verb == "iomem-acquire" && a.size() == 4) {
    std::uint64_t len = 0;
    if (!parse_u64(a[2], v) || !parse_u64(a[3], len)) return bad_action(res, act, "bad args");
    auto h = sys_->io().acquire_mem(v, len);
    if (!h.ok()) return note_error(res, act, h.error());
    io_handles_.insert_or_assign(a[1], h.take());
    note_ok(res, act);
  } else if (verb == "iomem-write" && a.size() == 4) {
    auto h = io_handles_.find(a[1]);
    if (h == io_handles_.end()) return bad_action(res, act, "unknown io handle " + a[1]);
    std::uint64_t value = 0;
    if (!parse_u64(a[2], v) || !parse_u64(a[3], value)) return bad_action(res, act, "bad args");
    Status st = sys_->io().write_once(h->second, v, 4, value);
    if (!st.ok()) return note_error(res, act, st.error());
    note_ok(res, act);
  } else if (verb == "iomem-read" && a.size() == 3) {
    auto h = io_handles_.find(a[1]);
    if (h == io_handles_.end()) return bad_action(res, act, "unknown io handle " + a[1]);
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad offset");
    auto r = sys_->io().read_once(h->second, v, 4);
    if (!r.ok()) return note_error(res, act, r.error());
    note_ok(res, act, std::to_string(r.value()));
  } else if (verb == "fuzz-frames" && a.size() == 3) {
    std::uint64_t n = 0, seed = 0;
    if (!parse_u64(a[1], n) || !parse_u64(a[2], seed)) return bad_action(res, act, "bad args");
    auto kind = kinds_.empty() ? Result<std::uint16_t>(Error{Errc::unknown_kind, "no kinds"})
                               : Result<std::uint16_t>(kinds_.begin()->second);
    if (!kind.ok()) return note_error(res, act, kind.error());
    SplitMix64 rng(seed);
    std::vector<FrameHandle> live;
    const std::uint64_t fs = sys_->map().frame_size();
    const std::uint64_t fc = sys_->map().frame_count();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint64_t roll = rng.bounded(3);
      if (roll == 0 || live.empty()) {
        auto h = FrameHandle::from_unused(sys_->map(), PhysAddr{rng.bounded(fc) * fs},
                                          kind.value());
        if (h.ok()) live.push_back(h.take());
      } else if (roll == 1) {
        auto d = live[rng.bounded(live.size())].duplicate();
        if (d.ok()) live.push_back(d.take());
      } else {
        std::size_t pick = rng.bounded(live.size());
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(pick));
      }
    }
    // The survivors stay claimed for the census expectation.
    for (auto& h : live) fuzz_survivors_.push_back(std::move(h));
    note_ok(res, act, "census " + std::to_string(sys_->map().census_total_refs()));
  } else {
    bad_action(res, act, "unknown or malformed action " + verb);
  }
}

inline void ScenarioRunner::execute_expect(const ScenarioAction& act, ScenarioResult& res) {
  const auto& a = act.args;
  if (a.size() < 2) return bad_action(res, act, "empty expect");
  const std::string& what = a[1];
  std::uint64_t v = 0;

  if (what == "census" && a.size() == 3) {
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad number");
    std::uint64_t actual = sys_->map().census_total_refs();
    expect_check(res, act, actual == v, std::to_string(actual));
  } else if (what == "refcount" && a.size() == 4) {
    std::uint64_t frame = 0;
    if (!parse_u64(a[2], frame) || !parse_u64(a[3], v)) return bad_action(res, act, "bad args");
    std::uint64_t actual = sys_->map().peek_meta(frame).ref_count;
    expect_check(res, act, actual == v, std::to_string(actual));
  } else if (what == "state" && a.size() == 4) {
    std::uint64_t frame = 0;
    if (!parse_u64(a[2], frame)) return bad_action(res, act, "bad frame");
    FrameMeta m = sys_->map().peek_meta(frame);
    std::string actual = m.state.is_unused() ? "unused"
                         : m.state.is_typed() ? "typed"
                                              : "untyped";
    expect_check(res, act, actual == a[3], actual);
  } else if (what == "bytes" && a.size() == 5) {
    std::vector<std::uint8_t> want;
    if (!parse_u64(a[3], v) || !parse_hex(a[4], want)) return bad_action(res, act, "bad args");
    Result<std::vector<std::uint8_t>> r = Error{Errc::out_of_bounds};
    if (auto f = frames_.find(a[2]); f != frames_.end()) r = f->second.read_bytes(v, want.size());
    else if (auto s = segments_.find(a[2]); s != segments_.end()) {
      r = s->second.read_bytes(v, want.size());
    } else {
      return bad_action(res, act, "unknown handle " + a[2]);
    }
    if (!r.ok()) return expect_check(res, act, false, r.error().to_string());
    expect_check(res, act, r.value() == want, format_hex(r.value()));
  } else if (what == "last-error" && a.size() == 3) {
    std::string actual = errc_name(last_error_.code);
    expect_check(res, act, actual == a[2], actual);
  } else if (what == "guard-violations" && a.size() == 3) {
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad number");
    std::uint64_t actual = sys_->sched().guard_reports().size();
    expect_check(res, act, actual == v, std::to_string(actual));
  } else if (what == "dma-blocked-min" && a.size() == 3) {
    if (!parse_u64(a[2], v)) return bad_action(res, act, "bad number");
    std::uint64_t actual = sys_->dma().blocked_count();
    expect_check(res, act, actual >= v, std::to_string(actual));
  } else if (what == "irq-delivered" && a.size() == 4) {
    std::uint64_t vec = 0;
    if (!parse_u64(a[2], vec) || !parse_u64(a[3], v)) return bad_action(res, act, "bad args");
    std::uint64_t actual = sys_->irq().delivered(static_cast<std::uint32_t>(vec));
    expect_check(res, act, actual == v, std::to_string(actual));
  } else if (what == "trap-log" && a.size() >= 3) {
    auto t = tasks_.find(a[2]);
    if (t == tasks_.end()) return bad_action(res, act, "unknown task " + a[2]);
    std::string want;
    for (std::size_t i = 3; i < a.size(); ++i) {
      if (i > 3) want += " ";
      want += a[i];
    }
    std::string actual;
    for (const auto& entry : syscalls_->trap_log(t->second)) {
      if (!actual.empty()) actual += ";";
      actual += entry;
    }
    expect_check(res, act, actual == want, actual);
  } else if (what == "output" && a.size() == 4) {
    auto t = tasks_.find(a[2]);
    if (t == tasks_.end()) return bad_action(res, act, "unknown task " + a[2]);
    std::vector<std::uint8_t> want;
    if (!parse_hex(a[3], want)) return bad_action(res, act, "bad hex");
    auto actual = syscalls_->output(t->second);
    expect_check(res, act, actual == want, format_hex(actual));
  } else if (what == "response" && a.size() == 4) {
    std::vector<std::uint8_t> want;
    if (!parse_hex(a[3], want)) return bad_action(res, act, "bad hex");
    auto it = responses_.find(a[2]);
    std::vector<std::uint8_t> actual = it == responses_.end() ? std::vector<std::uint8_t>{}
                                                              : it->second;
    expect_check(res, act, actual == want, format_hex(actual));
  } else if (what == "current" && a.size() == 4) {
    std::uint32_t cpu = 0;
    if (!parse_cpu(a[2], cpu)) return bad_action(res, act, "bad cpu");
    TaskId actual = sys_->sched().current(cpu);
    if (a[3] == "idle") {
      expect_check(res, act, actual == kNoTask, std::to_string(actual));
    } else {
      auto t = tasks_.find(a[3]);
      if (t == tasks_.end()) return bad_action(res, act, "unknown task " + a[3]);
      expect_check(res, act, actual == t->second, std::to_string(actual));
    }
  } else {
    bad_action(res, act, "unknown expect " + what);
  }
}

}  // namespace fk
