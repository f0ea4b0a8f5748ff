#include "cli.hpp"

#include "brachy/http_service.hpp"
#include "brachy/igtlink.hpp"
#include "brachy/workstation.hpp"

#include <csignal>
#include <condition_variable>
#include <ctime>
#include <iostream>
#include <mutex>

namespace brachy::cli {

namespace {

Json message_json(const igtl::Message& msg) {
  Json j = {{"type", msg.type_name}, {"device", msg.device_name}, {"timestamp", msg.timestamp}};
  std::visit(
      [&](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, igtl::TransformBody>) {
          j["matrix"] = body.matrix;
        } else if constexpr (std::is_same_v<T, igtl::StatusBody>) {
          j["code"] = body.code;
          j["subcode"] = body.subcode;
          j["error_name"] = body.error_name;
          j["message"] = body.message;
        } else if constexpr (std::is_same_v<T, igtl::ImageBody>) {
          j["dims"] = body.dims;
          j["spacing"] = body.spacing;
          j["dtype"] = std::string(to_string(body.dtype));
        } else {
          j["body_size"] = body.raw.size();
        }
      },
      msg.body);
  return j;
}

/// Blocks SIGINT and SIGTERM for this thread and every thread started after it.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_stop(const sigset_t& set, double seconds) {
  if (seconds <= 0.0) {
    int sig = 0;
    sigwait(&set, &sig);
    return;
  }
  timespec ts{static_cast<time_t>(seconds), static_cast<long>((seconds - static_cast<time_t>(seconds)) * 1e9)};
  sigtimedwait(&set, nullptr, &ts);
}

}  // namespace

void add_network_commands(CLI::App& app, Context& ctx) {
  {
    struct Opts {
      std::string data = "brachy-data", bind = "127.0.0.1", devices;
      int http_port = 8080;
      int igtl_port = igtl::kDefaultPort;
      bool no_igtl = false;
      double dwell_weight = 700.0;
      double exit_after = 0.0;
      bool quiet = false;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("serve", "HTTP planning service with an igtlink listener");
    cmd->add_option("--data", o->data, "Archive directory")->envname("BRACHY_DATA_DIR");
    cmd->add_option("--bind", o->bind, "Listen address")->envname("BRACHY_BIND");
    cmd->add_option("--port", o->http_port, "HTTP port (0 = ephemeral)")
        ->envname("BRACHY_HTTP_PORT")
        ->check(CLI::Range(0, 65535));
    cmd->add_option("--igtl-port", o->igtl_port, "igtlink port (0 = ephemeral)")
        ->envname("BRACHY_IGTL_PORT")
        ->check(CLI::Range(0, 65535));
    cmd->add_flag("--no-igtl", o->no_igtl, "Do not start the igtlink listener");
    cmd->add_option("--devices", o->devices, "Device catalog JSON ({\"templates\": [...]})")->check(CLI::ExistingFile);
    cmd->add_option("--dwell-weight", o->dwell_weight, "Default dwell weight for new cases")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--exit-after", o->exit_after, "Stop after this many seconds (0 = run until signalled)");
    cmd->add_flag("--quiet", o->quiet, "No request log on stderr");
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        const sigset_t signals = block_stop_signals();
        WorkstationOptions wopts;
        if (!o->devices.empty()) wopts.devices = DeviceCatalog::from_json(read_json_file(o->devices));
        wopts.replan.dwell_weight = o->dwell_weight;
        auto log_mutex = std::make_shared<std::mutex>();
        if (!o->quiet)
          wopts.log = [log_mutex](std::string_view line) {
            std::lock_guard lock(*log_mutex);
            std::cerr << "[" << utc_timestamp() << "] " << line << "\n";
          };
        std::filesystem::create_directories(o->data);
        Workstation ws(o->data, wopts);

        HttpOptions hopts;
        hopts.bind_address = o->bind;
        hopts.port = static_cast<std::uint16_t>(o->http_port);
        HttpService http(ws, hopts);
        http.start();

        std::unique_ptr<igtl::Server> igtl_server;
        if (!o->no_igtl) {
          igtl::ServerOptions iopts;
          iopts.bind_address = o->bind;
          iopts.port = static_cast<std::uint16_t>(o->igtl_port);
          igtl_server = std::make_unique<igtl::Server>(iopts, ws.igtl_handler(), [&ws, wopts](const igtl::Peer& p,
                                                                                            const igtl::DecodeResult& r) {
            if (wopts.log) wopts.log("igtlink peer " + p.address + ": " + r.error);
          });
          igtl_server->start();
        }
        emit(ctx,
             {{"http_port", http.port()},
              {"igtl_port", igtl_server ? Json(igtl_server->port()) : Json(nullptr)},
              {"data", o->data}},
             [&](std::ostream& os) {
               os << "serving http://" << o->bind << ":" << http.port();
               if (igtl_server) os << ", igtlink on port " << igtl_server->port();
               os << ", data in " << o->data << "\n";
             });
        wait_for_stop(signals, o->exit_after);
        http.stop();
        if (igtl_server) igtl_server->stop();
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string host = "127.0.0.1", device = "brachy", transform, volume, status;
      int port = igtl::kDefaultPort;
      std::uint64_t timestamp = 0;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("igtl-send", "Send TRANSFORM, IMAGE or STATUS messages to an igtlink listener");
    cmd->add_option("--host", o->host, "Listener host");
    cmd->add_option("--port", o->port, "Listener port")->check(CLI::Range(1, 65535));
    cmd->add_option("--device", o->device, "Device name (a case id binds to that case)");
    cmd->add_option("--transform", o->transform, "Transform JSON to send")->check(CLI::ExistingFile);
    cmd->add_option("--volume", o->volume, "SVOL to send as geometry TRANSFORM plus IMAGE")->check(CLI::ExistingFile);
    cmd->add_option("--status", o->status, "STATUS as CODE:TEXT");
    cmd->add_option("--timestamp", o->timestamp, "Header timestamp");
    cmd->callback([o, &ctx] {
      if (o->transform.empty() && o->volume.empty() && o->status.empty())
        throw CLI::RequiredError("one of --transform, --volume, --status");
      ctx.action = [o, &ctx] {
        std::vector<igtl::Message> msgs;
        if (!o->transform.empty())
          msgs.push_back(igtl::Message::transform(o->device, read_transform(o->transform), o->timestamp));
        if (!o->volume.empty()) {
          auto [geom, image] = igtl::volume_messages(load_volume(o->volume), o->device, o->timestamp);
          msgs.push_back(std::move(geom));
          msgs.push_back(std::move(image));
        }
        if (!o->status.empty()) {
          const auto colon = o->status.find(':');
          int code = 0;
          try {
            code = std::stoi(o->status.substr(0, colon));
          } catch (const std::exception&) {
            throw CLI::ValidationError("--status", "expected CODE:TEXT");
          }
          if (code < 0 || code > 65535) throw CLI::ValidationError("--status", "code out of range");
          const std::string text = colon == std::string::npos ? "" : o->status.substr(colon + 1);
          msgs.push_back(igtl::Message::status(o->device, static_cast<std::uint16_t>(code), "", text));
        }
        auto conn = igtl::Connection::connect(o->host, static_cast<std::uint16_t>(o->port));
        std::size_t bytes = 0;
        Json sent = Json::array();
        for (const auto& m : msgs) {
          conn.send(m);
          bytes += igtl::encode(m).size();
          sent.push_back(message_json(m));
        }
        conn.close();
        emit(ctx, {{"sent", sent}, {"bytes", bytes}});
        return kExitOk;
      };
    });
  }
  {
    struct Opts {
      std::string bind = "127.0.0.1", save_dir;
      int port = igtl::kDefaultPort;
      std::size_t count = 1;
      double timeout_s = 30.0;
    };
    auto o = std::make_shared<Opts>();
    auto* cmd = app.add_subcommand("igtl-recv", "Listen for igtlink messages and print them");
    cmd->add_option("--bind", o->bind, "Listen address");
    cmd->add_option("--port", o->port, "Listen port (0 = ephemeral)")->check(CLI::Range(0, 65535));
    cmd->add_option("--count", o->count, "Exit after this many messages")->check(CLI::PositiveNumber);
    cmd->add_option("--timeout", o->timeout_s, "Give up after this many seconds")->check(CLI::PositiveNumber);
    cmd->add_option("--save-dir", o->save_dir, "Write received volumes here as <device>_<n>.svol");
    cmd->callback([o, &ctx] {
      ctx.action = [o, &ctx] {
        std::mutex m;
        std::condition_variable cv;
        Json received = Json::array();
        igtl::VolumeAssembler assembler;
        std::size_t volumes = 0;
        igtl::ServerOptions opts;
        opts.bind_address = o->bind;
        opts.port = static_cast<std::uint16_t>(o->port);
        igtl::Server server(opts, [&](const igtl::Peer&, const igtl::Message& msg) {
          std::lock_guard lock(m);
          if (received.size() >= o->count) return;
          Json j = message_json(msg);
          if (auto vol = assembler.accept(msg); vol && !o->save_dir.empty()) {
            std::filesystem::create_directories(o->save_dir);
            const auto path =
                std::filesystem::path(o->save_dir) / (msg.device_name + "_" + std::to_string(++volumes) + ".svol");
            save_volume(*vol, path);
            j["saved"] = path.filename().string();
          }
          if (!ctx.globals.json) std::cout << j.dump() << std::endl;
          received.push_back(std::move(j));
          cv.notify_all();
        });
        server.start();
        std::cerr << "listening on " << o->bind << ":" << server.port() << std::endl;
        bool complete = false;
        {
          std::unique_lock lock(m);
          complete = cv.wait_for(lock, std::chrono::duration<double>(o->timeout_s),
                                 [&] { return received.size() >= o->count; });
        }
        server.stop();
        if (ctx.globals.json) emit(ctx, {{"messages", received}, {"complete", complete}});
        if (!complete) {
          std::cerr << "timed out after " << received.size() << " of " << o->count << " messages\n";
          return kExitDomain;
        }
        return kExitOk;
      };
    });
  }
}

}  // namespace brachy::cli
