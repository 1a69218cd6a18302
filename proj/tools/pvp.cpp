// pvp: command-line front end. `serve` hosts the service; the other
// subcommands talk to a running service over HTTP, except `evaluate`, which
// scores frame directories locally.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "pvp/evalkit.hpp"
#include "pvp/service/client.hpp"
#include "pvp/service/server.hpp"

using namespace pvp;
using namespace pvp::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "cannot read " + path);
    return {std::istreambuf_iterator<char>(is), {}};
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Unavailable, "cannot write " + path);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Prints the body; non-2xx replies become a failing exit status.
int report(const HttpResponse& r) {
    if (!r.body.empty()) {
        try {
            std::cout << json::parse(r.body).dump(2) << "\n";
        } catch (const json::exception&) {
            std::cout << r.body << "\n";
        }
    }
    return r.ok() ? 0 : 1;
}

IndexRange parse_range(const std::string& s) {
    const auto c = s.find(':');
    if (c == std::string::npos) throw Error(ErrorKind::InvalidArgument, "range must look like begin:end");
    return {std::stoi(s.substr(0, c)), std::stoi(s.substr(c + 1))};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Personalized portrait avatars: build, serve, render, evaluate"};
    app.require_subcommand(1);
    std::string host = "127.0.0.1";
    unsigned short port = 8080;
    app.add_option("--host", host, "Service host");
    app.add_option("--port", port, "Service port");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the avatar service");
    std::string data_dir;
    std::string address = "127.0.0.1";
    int io_threads = 4, render_threads = 2;
    serve->add_option("--data-dir", data_dir, "Data directory (default: $PVP_DATA_DIR or ./pvp-data)");
    serve->add_option("--address", address, "Bind address");
    serve->add_option("--io-threads", io_threads);
    serve->add_option("--render-threads", render_threads);

    // create
    auto* create = app.add_subcommand("create", "Create an avatar from a toy spec or from frames + params");
    bool toy = false;
    int toy_frames = 600, image_size = 64;
    std::uint64_t toy_seed = 2024;
    std::string frames_dir, params_file;
    create->add_flag("--toy", toy, "Synthesize a toy subject video");
    create->add_option("--frames", toy_frames, "Toy video length");
    create->add_option("--seed", toy_seed, "Toy video seed");
    create->add_option("--image-size", image_size, "Toy frame size");
    create->add_option("--frames-dir", frames_dir, "Directory of *.ppm frames (sorted by name)");
    create->add_option("--params", params_file, "PVPF file with one parameter set per frame");

    // run
    auto* run = app.add_subcommand("run", "Start the pipeline for an avatar");
    std::string id, config_json;
    std::vector<std::string> sets;
    bool wait = false;
    run->add_option("id", id)->required();
    run->add_option("--config", config_json, "JSON object of config overrides");
    run->add_option("--set", sets, "key=value override (value parsed as JSON)");
    run->add_flag("--wait", wait, "Poll progress until ready or failed");

    auto* cancel = app.add_subcommand("cancel", "Cancel a running pipeline");
    cancel->add_option("id", id)->required();
    auto* reset = app.add_subcommand("reset", "Return a failed avatar to ingesting");
    reset->add_option("id", id)->required();
    app.add_subcommand("list", "List avatars");
    auto* get = app.add_subcommand("get", "Show one avatar record");
    get->add_option("id", id)->required();
    auto* progress = app.add_subcommand("progress", "Show pipeline progress");
    progress->add_option("id", id)->required();
    auto* del = app.add_subcommand("delete", "Delete an avatar");
    del->add_option("id", id)->required();

    auto* dirs = app.add_subcommand("directions", "List or upload edit directions");
    std::string upload, output;
    dirs->add_option("id", id)->required();
    dirs->add_option("--set", upload, "PVPD file to upload");
    dirs->add_option("-o,--output", output, "Save the current directions as PVPD");

    auto* driving = app.add_subcommand("driving", "Upload a driving sequence for playback");
    std::string driving_name;
    driving->add_option("id", id)->required();
    driving->add_option("name", driving_name)->required();
    driving->add_option("file", upload, "PVPF file")->required();

    auto* exp = app.add_subcommand("export", "Export a ready avatar as an archive");
    exp->add_option("id", id)->required();
    exp->add_option("-o,--output", output)->required();
    auto* imp = app.add_subcommand("import", "Import an avatar archive");
    imp->add_option("file", upload)->required();

    // render
    auto* rend = app.add_subcommand("render", "Render one frame for a control state");
    double yaw = 0.0, pitch = 0.0;
    std::vector<double> jaw;
    std::vector<std::string> expr, edits;
    std::string playback;
    int playback_frame = 0;
    rend->add_option("id", id)->required();
    rend->add_option("--yaw", yaw, "Degrees");
    rend->add_option("--pitch", pitch, "Degrees");
    rend->add_option("--jaw", jaw, "Three axis-angle values")->expected(3);
    rend->add_option("--expr", expr, "index=value, repeatable");
    rend->add_option("--edit", edits, "name=strength, repeatable");
    rend->add_option("--playback", playback, "Driving file name (replaces pose/expression)");
    rend->add_option("--playback-frame", playback_frame);
    rend->add_option("-o,--output", output, "PPM output")->required();

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Score predicted frames against ground truth");
    std::string pred_dir, gt_dir, mask_dir, protocol = "nha", train_range, eval_range;
    bool key_values = false;
    eval->add_option("--pred", pred_dir)->required();
    eval->add_option("--gt", gt_dir)->required();
    eval->add_option("--masks", mask_dir, "Directory of *.pgm alpha masks");
    eval->add_option("--protocol", protocol, "nha | nbs | custom");
    eval->add_option("--train", train_range, "custom: begin:end");
    eval->add_option("--eval", eval_range, "custom: begin:end");
    eval->add_flag("--key-values", key_values, "Machine-readable output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (serve->parsed()) {
            ServiceConfig cfg;
            cfg.data_dir = data_dir.empty() ? data_dir_from_env("pvp-data") : data_dir;
            AvatarService svc(cfg);
            if (svc.recovered() > 0) std::cerr << "marked " << svc.recovered() << " interrupted avatar(s) failed\n";
            Server server(svc, {address, port, io_threads, render_threads});
            server.start();
            std::cerr << "serving " << fs::absolute(cfg.data_dir).string() << " on " << address << ":" << server.port() << "\n";
            server.run_until_signal();
            return 0;
        }
        if (eval->parsed()) {
            SplitSpec spec;
            spec.protocol = protocol_from_string(protocol);
            if (spec.protocol == SplitProtocol::Custom) {
                spec.train = parse_range(train_range);
                spec.eval = parse_range(eval_range);
            }
            std::optional<fs::path> masks;
            if (!mask_dir.empty()) masks = mask_dir;
            const auto r = evaluate_directories(pred_dir, gt_dir, spec, masks, PyramidPerceptual{});
            std::cout << (key_values ? r.to_key_values() : r.to_text());
            return 0;
        }

        const HttpClient client(host, port);
        if (create->parsed()) {
            if (toy) {
                json body = {{"toy", {{"frames", toy_frames}, {"seed", toy_seed}}}, {"image_size", image_size}};
                return report(client.request("POST", "/avatars", body.dump()));
            }
            if (frames_dir.empty() || params_file.empty())
                throw Error(ErrorKind::InvalidArgument, "create needs --toy or both --frames-dir and --params");
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(frames_dir))
                if (e.path().extension() == ".ppm") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            std::vector<Image> frames;
            for (const auto& f : files) frames.push_back(read_ppm(f));
            std::ostringstream os(std::ios::binary);
            write_frame_stack(os, frames);
            os << read_file(params_file);
            return report(client.request("POST", "/avatars", os.str(), "application/octet-stream"));
        }
        if (run->parsed()) {
            json overrides = config_json.empty() ? json::object() : json::parse(config_json);
            for (const auto& s : sets) {
                const auto eq = s.find('=');
                if (eq == std::string::npos) throw Error(ErrorKind::InvalidArgument, "--set expects key=value");
                overrides[s.substr(0, eq)] = json::parse(s.substr(eq + 1));
            }
            const auto r = client.request("POST", "/avatars/" + id + "/pipeline", overrides.dump());
            if (!wait || !r.ok()) return report(r);
            while (true) {
                const auto p = client.request("GET", "/avatars/" + id + "/progress");
                if (!p.ok()) return report(p);
                const auto j = json::parse(p.body);
                std::cerr << j.value("stage", "") << " " << j.value("fraction", 0.0) << " step " << j.value("step", 0)
                          << " loss " << j.value("loss", 0.0) << "\n";
                if (!j.value("active", false)) return report(p) | (j.value("state", "") == "ready" ? 0 : 1);
                std::this_thread::sleep_for(std::chrono::seconds(2));
            }
        }
        if (cancel->parsed()) return report(client.request("DELETE", "/avatars/" + id + "/pipeline"));
        if (reset->parsed()) return report(client.request("POST", "/avatars/" + id + "/reset"));
        if (app.got_subcommand("list")) return report(client.request("GET", "/avatars"));
        if (get->parsed()) return report(client.request("GET", "/avatars/" + id));
        if (progress->parsed()) return report(client.request("GET", "/avatars/" + id + "/progress"));
        if (del->parsed()) return report(client.request("DELETE", "/avatars/" + id));
        if (dirs->parsed()) {
            if (!upload.empty())
                return report(client.request("POST", "/avatars/" + id + "/directions", read_file(upload), "application/octet-stream"));
            if (!output.empty()) {
                const auto r = client.request("GET", "/avatars/" + id + "/directions?format=pvpd");
                if (!r.ok()) return report(r);
                write_file(output, r.body);
                return 0;
            }
            return report(client.request("GET", "/avatars/" + id + "/directions"));
        }
        if (driving->parsed())
            return report(client.request("POST", "/avatars/" + id + "/driving/" + driving_name, read_file(upload),
                                         "application/octet-stream"));
        if (exp->parsed()) {
            const auto r = client.request("GET", "/avatars/" + id + "/export");
            if (!r.ok()) return report(r);
            write_file(output, r.body);
            std::cout << output << " (" << r.body.size() << " bytes)\n";
            return 0;
        }
        if (imp->parsed()) return report(client.request("POST", "/import", read_file(upload), "application/octet-stream"));
        if (rend->parsed()) {
            ControlState s;
            s.seq = 1;
            s.params.yaw_deg = yaw;
            s.params.pitch_deg = pitch;
            for (std::size_t i = 0; i < jaw.size() && i < 3; ++i) s.params.jaw[i] = jaw[i];
            for (const auto& e : expr) {
                const auto eq = e.find('=');
                const int k = std::stoi(e.substr(0, eq));
                if (eq == std::string::npos || k < 0 || k >= kExpressionDims)
                    throw Error(ErrorKind::InvalidArgument, "--expr expects index=value with index < 50");
                s.params.expression[static_cast<std::size_t>(k)] = std::stod(e.substr(eq + 1));
            }
            for (const auto& e : edits) {
                const auto eq = e.find('=');
                if (eq == std::string::npos) throw Error(ErrorKind::InvalidArgument, "--edit expects name=strength");
                s.edits.push_back({e.substr(0, eq), std::stod(e.substr(eq + 1))});
            }
            if (!playback.empty()) s.playback = Playback{playback, playback_frame, true};
            const auto r = client.request("POST", "/avatars/" + id + "/render", control_state_to_json(s));
            if (!r.ok()) return report(r);
            write_file(output, r.body);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
