#pragma once

// Command line entry point: serve, gen, replay, bench.
// Exit codes: 0 ok, 1 configuration error, 2 runtime error.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <boost/asio.hpp>

#include "perfstream/bench.hpp"
#include "perfstream/session.hpp"
#include "perfstream/workload_gen.hpp"
#include "perfstream/ws_server.hpp"

namespace perfstream {

constexpr const char* kEnvPrefix = "PERFSTREAM_";

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_runtime = 2 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cli_detail {

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

inline std::string env_name(const std::string& key) {
  std::string s = kEnvPrefix;
  for (char c : key) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

struct Endpoint {
  std::string host;
  unsigned short port = 0;
};

/// Parses tcp://HOST:PORT.
inline std::optional<Endpoint> parse_tcp(const std::string& s) {
  const std::string prefix = "tcp://";
  if (s.rfind(prefix, 0) != 0) return std::nullopt;
  const std::string rest = s.substr(prefix.size());
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos) throw ConfigError("endpoint '" + s + "' must have the form tcp://HOST:PORT");
  Endpoint e;
  e.host = rest.substr(0, colon);
  const std::string port = rest.substr(colon + 1);
  if (e.host.empty() || port.empty() || port.find_first_not_of("0123456789") != std::string::npos ||
      std::stoul(port) > 65535)
    throw ConfigError("endpoint '" + s + "' must have the form tcp://HOST:PORT");
  e.port = static_cast<unsigned short>(std::stoul(port));
  return e;
}

/// Line sink writing to stdout, a file or a TCP peer.
class LineOutput {
 public:
  LineOutput(const std::string& target, std::ostream& out) : out_(&out) {
    if (target == "stdout" || target == "-") return;
    if (auto ep = parse_tcp(target)) {
      socket_ = std::make_unique<tcp::socket>(ioc_);
      tcp::resolver resolver(ioc_);
      boost::asio::connect(*socket_, resolver.resolve(ep->host, std::to_string(ep->port)));
      return;
    }
    file_ = std::make_unique<std::ofstream>(target);
    if (!*file_) throw std::runtime_error("cannot open output file '" + target + "'");
    out_ = file_.get();
  }

  bool write(const std::string& line) {
    if (socket_) {
      boost::system::error_code ec;
      const std::string buf = line + '\n';
      boost::asio::write(*socket_, boost::asio::buffer(buf), ec);
      return !ec;
    }
    *out_ << line << '\n';
    return static_cast<bool>(*out_);
  }

  void finish() {
    if (socket_) {
      boost::system::error_code ec;
      socket_->shutdown(tcp::socket::shutdown_send, ec);
    } else {
      out_->flush();
    }
  }

 private:
  boost::asio::io_context ioc_;
  std::unique_ptr<tcp::socket> socket_;
  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_;
};

/// Startup setting values given as text, keyed by registry key.
using SettingTexts = std::map<std::string, std::string>;

inline void add_setting_flags(CLI::App& cmd, SettingTexts& texts) {
  for (const auto& spec : setting_registry()) {
    if (spec.runtime_only) continue;
    auto* opt = cmd.add_option_function<std::string>(
        "--" + flag_name(spec.key) + (spec.key.find('_') != std::string::npos ? ",--" + spec.key : std::string()),
        [&texts, key = spec.key](const std::string& v) { texts[key] = v; }, spec.help);
    opt->envname(env_name(spec.key));
  }
}

/// Validates startup settings through the registry. Metric indices are
/// checked against the stream later, once its preamble arrives.
inline SessionState build_session(const SettingTexts& texts) {
  SessionState s;
  SettingContext ctx;
  ctx.metrics = std::numeric_limits<int>::max();
  ctx.hierarchy_depth = std::numeric_limits<int>::max();
  for (const auto& [key, text] : texts) {
    const SettingResult r = apply_setting(s, key, parse_setting_text(text), ctx);
    if (!r.ok) throw ConfigError(r.error);
  }
  return s;
}

}  // namespace cli_detail

/// Runs the command line; `out` receives machine-readable output, `err`
/// diagnostics and the startup log.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Streaming performance analytics server and tools", "perfstream"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "perfstream 1.0");

  // serve
  CLI::App* serve = app.add_subcommand("serve", "ingest a stream and serve analysis frames over WebSocket");
  std::string host = "127.0.0.1";
  unsigned short port = 8080;
  std::string ingest = "stdin";
  Index window_capacity = 64;
  double timeout_factor = 5.0;
  std::uint64_t seed = 0;
  std::string log_level = "info";
  bool exit_after_eof = false;
  SettingTexts settings;
  serve->add_option("--host", host, "listen address")->envname(env_name("host"))->capture_default_str();
  serve->add_option("--port", port, "WebSocket port (0 picks a free port)")->envname(env_name("port"))->capture_default_str();
  serve->add_option("--ingest", ingest, "stdin, FILE or tcp://HOST:PORT to listen on")
      ->envname(env_name("ingest"))
      ->capture_default_str();
  serve->add_option("--window-capacity", window_capacity, "sealed slices kept in the window")
      ->envname(env_name("window_capacity"))
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  serve->add_option("--timeout-factor", timeout_factor, "seal stragglers after this many median intervals")
      ->envname(env_name("timeout_factor"))
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  serve->add_option("--seed", seed, "seed of the randomized algorithms")->envname(env_name("seed"))->capture_default_str();
  serve->add_option("--log-level", log_level, "info or quiet")
      ->envname(env_name("log_level"))
      ->check(CLI::IsMember({"info", "quiet"}))
      ->capture_default_str();
  serve->add_flag("--exit-after-eof", exit_after_eof, "exit once a stdin or file source is exhausted and processed");
  add_setting_flags(*serve, settings);

  // gen
  CLI::App* gen = app.add_subcommand("gen", "emit a synthetic stream");
  std::string scenario_file;
  std::uint64_t gen_seed = 1;
  std::optional<double> interval;
  std::optional<std::int64_t> length;
  std::string gen_out = "stdout";
  bool no_throttle = false, print_scenario = false;
  gen->add_option("--scenario", scenario_file, "scenario JSON file (default: built-in reference scenario)")
      ->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "random seed")->capture_default_str();
  gen->add_option("--interval", interval, "emission period in ms (overrides the scenario)")->check(CLI::NonNegativeNumber);
  gen->add_option("--length", length, "slices to emit (overrides the scenario)")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "stdout, FILE or tcp://HOST:PORT")->capture_default_str();
  gen->add_flag("--no-throttle", no_throttle, "emit as fast as the sink accepts");
  gen->add_flag("--print-scenario", print_scenario, "print the effective scenario JSON and exit");

  // replay
  CLI::App* rep = app.add_subcommand("replay", "re-emit a recorded stream");
  std::string replay_file;
  double speed = 1.0;
  std::string replay_out = "stdout";
  rep->add_option("file", replay_file, "recorded NDJSON stream")->required()->check(CLI::ExistingFile);
  rep->add_option("--speed", speed, "time multiplier; 0 replays at full speed")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  rep->add_option("--out", replay_out, "stdout, FILE or tcp://HOST:PORT")->capture_default_str();

  // bench
  CLI::App* bench = app.add_subcommand("bench", "run the throughput benchmark suite");
  std::string suite = "table1";
  bool quick = false;
  std::string bench_out = "stdout";
  bench->add_option("--suite", suite, "benchmark suite")->check(CLI::IsMember({"table1"}))->capture_default_str();
  bench->add_flag("--quick", quick, "reduced sizes for a smoke run");
  bench->add_option("--out", bench_out, "stdout or FILE")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::CallForVersion& e) {
    out << "perfstream 1.0\n";
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  }

  try {
    if (*serve) {
      ServerConfig cfg;
      cfg.host = host;
      cfg.port = port;
      cfg.session = build_session(settings);
      cfg.engine.seed = seed;
      cfg.store.window_capacity = window_capacity;
      cfg.store.timeout_factor = timeout_factor;
      std::optional<std::string> file_source;
      if (ingest != "stdin") {
        if (auto ep = parse_tcp(ingest)) {
          cfg.ingest_port = ep->port;
          if (ep->host != host) throw ConfigError("ingest host must match --host");
        } else {
          file_source = ingest;
          std::ifstream probe(ingest);
          if (!probe) throw std::runtime_error("cannot open ingest file '" + ingest + "'");
        }
      }
      if (log_level == "quiet") {
        cfg.log = nullptr;
      } else {
        cfg.log = [&err](const std::string& m) { err << m << '\n'; };
      }
      nlohmann::json echo{{"host", host},
                          {"port", port},
                          {"ingest", ingest},
                          {"window_capacity", window_capacity},
                          {"timeout_factor", timeout_factor},
                          {"seed", seed},
                          {"log_level", log_level},
                          {"session", session_to_json(cfg.session)}};
      if (cfg.log) cfg.log("config " + echo.dump());

      Server server(cfg);
      try {
        server.start();
      } catch (const boost::system::system_error& e) {
        err << "error: cannot listen: " << e.what() << '\n';
        return exit_runtime;
      }
      nlohmann::json ready{{"ws_port", server.port()}};
      if (cfg.ingest_port) ready["ingest_port"] = server.ingest_port();
      out << ready.dump() << std::endl;

      stop_flag() = false;
      std::signal(SIGINT, [](int) { stop_flag() = true; });
      std::signal(SIGTERM, [](int) { stop_flag() = true; });

      std::atomic<bool> source_done{false};
      std::thread reader;
      if (!cfg.ingest_port) {
        reader = std::thread([&] {
          std::ifstream file;
          std::istream* in = &std::cin;
          if (file_source) {
            file.open(*file_source);
            in = &file;
          }
          for (std::string line; std::getline(*in, line);) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) server.push_line(std::move(line));
            if (stop_flag()) break;
          }
          server.end_of_stream();
          source_done = true;
        });
      }
      while (!stop_flag()) {
        if (exit_after_eof && source_done && server.idle()) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
      const auto& st = server.stats();
      nlohmann::json summary{{"frames", st.frames.load()},
                             {"last_t", st.last_t.load()},
                             {"lines", st.lines.load()},
                             {"malformed", st.malformed.load()},
                             {"max_tick_ms", st.max_tick_ms.load()},
                             {"max_latency_ms", st.max_latency_ms.load()}};
      server.stop();
      if (cfg.log) cfg.log("summary " + summary.dump());
      if (reader.joinable()) {
        if (source_done) {
          reader.join();
        } else {
          reader.detach();  // blocked on stdin; the process is exiting
        }
      }
      return exit_ok;
    }

    if (*gen) {
      Scenario sc = Scenario::reference();
      if (!scenario_file.empty()) {
        std::ifstream f(scenario_file);
        nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
        if (j.is_discarded()) throw ConfigError("scenario file is not valid JSON");
        try {
          sc = scenario_from_json(j);
        } catch (const std::exception& e) {
          throw ConfigError(e.what());
        }
      }
      if (interval) sc.interval_ms = *interval;
      if (length) sc.length = *length;
      try {
        sc.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      if (print_scenario) {
        out << scenario_to_json(sc).dump(2) << '\n';
        return exit_ok;
      }
      LineOutput sink(gen_out, out);
      const EmitStats st = generate(sc, gen_seed, [&](const std::string& l) { return sink.write(l); }, !no_throttle);
      sink.finish();
      if (st.stopped) {
        err << "error: output closed after " << st.lines << " lines\n";
        return exit_runtime;
      }
      return exit_ok;
    }

    if (*rep) {
      std::ifstream in(replay_file);
      if (!in) throw std::runtime_error("cannot open '" + replay_file + "'");
      LineOutput sink(replay_out, out);
      const ReplayStats st = replay(in, speed, [&](const std::string& l) { return sink.write(l); });
      sink.finish();
      if (st.malformed > 0) err << "warning: skipped " << st.malformed << " malformed lines\n";
      if (st.stopped) {
        err << "error: output closed after " << st.lines << " lines\n";
        return exit_runtime;
      }
      return exit_ok;
    }

    if (*bench) {
      const BenchOptions opts = quick ? BenchOptions::quick() : BenchOptions{};
      const nlohmann::json report = bench_table1(opts);
      if (bench_out == "stdout" || bench_out == "-") {
        out << report.dump(2) << '\n';
      } else {
        std::ofstream f(bench_out);
        if (!f) throw std::runtime_error("cannot open '" + bench_out + "'");
        f << report.dump(2) << '\n';
      }
      if (!report["ok"].get<bool>()) {
        err << "error: monotone trend check failed\n";
        return exit_runtime;
      }
      return exit_ok;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_runtime;
  }
  return exit_ok;
}

}  // namespace perfstream
