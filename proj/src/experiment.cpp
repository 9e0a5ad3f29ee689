#include "fedinv/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <thread>

#include "fedinv/image_io.hpp"
#include "fedinv/rng.hpp"

namespace fedinv {

const char* kOutputDirEnvVar = "FEDINV_OUTPUT_DIR";

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

long long parse_int(const std::string& v, int line) {
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) fail(line, "expected integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& v, int line) {
    char* end = nullptr;
    double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || v.empty()) fail(line, "expected number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v, int line) {
    if (v == "true") return true;
    if (v == "false") return false;
    fail(line, "expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::array<double, 3> parse_triplet(const std::string& v, int line) {
    auto parts = split_list(v);
    if (parts.size() != 3) fail(line, "expected three comma-separated values");
    return {parse_double(parts[0], line), parse_double(parts[1], line),
            parse_double(parts[2], line)};
}

void check_choice(const std::string& v, std::initializer_list<const char*> allowed,
                  const std::string& key, int line) {
    for (const char* a : allowed)
        if (v == a) return;
    std::string opts;
    for (const char* a : allowed) opts += std::string(opts.empty() ? "" : ", ") + a;
    fail(line, "key '" + key + "' must be one of {" + opts + "}, got '" + v + "'");
}

void validate_semantics(const ExperimentConfig& c) {
    if (c.data.source == "dir" && c.data.path.empty())
        throw ConfigError("config: [data] source=dir requires path");
    if (c.data.synth_samples < 1) throw ConfigError("config: synth_samples must be >= 1");
    if (c.data.classes < 2) throw ConfigError("config: classes must be >= 2");
    if (c.data.image_size < 8) throw ConfigError("config: image_size must be >= 8");
    if (c.data.stats == "explicit")
        for (double s : c.data.stddev)
            if (!(s > 0.0)) throw ConfigError("config: explicit std must be positive");
    if (c.model.hidden < 1) throw ConfigError("config: hidden must be >= 1");
    if (!(c.model.init_bound > 0.0)) throw ConfigError("config: init_bound must be positive");
    if (c.federation.clients < 1) throw ConfigError("config: clients must be >= 1");
    if (c.federation.clients_per_round < 1 ||
        c.federation.clients_per_round > c.federation.clients)
        throw ConfigError("config: clients_per_round must be in [1, clients]");
    if (c.federation.rounds < 0) throw ConfigError("config: rounds must be >= 0");
    if (c.federation.local_epochs < 1) throw ConfigError("config: local_epochs must be >= 1");
    if (c.federation.attack_round < 0 || c.federation.attack_round > c.federation.rounds)
        throw ConfigError("config: attack_round must be in [0, rounds]");
    if (c.defense.noise_levels.empty()) throw ConfigError("config: noise_levels is empty");
    for (double n : c.defense.noise_levels)
        if (n < 0.0) throw ConfigError("config: noise levels must be >= 0");
    if (!(c.defense.noise_unit > 0.0)) throw ConfigError("config: noise_unit must be positive");
    if (!(c.defense.keep_ratio > 0.0) || c.defense.keep_ratio > 1.0)
        throw ConfigError("config: keep_ratio must be in (0, 1]");
    if (c.attack.methods.empty()) throw ConfigError("config: methods list is empty");
    for (const std::string& m : c.attack.methods) attack_method_from_name(m);
    if (c.attack.samples < 1) throw ConfigError("config: samples must be >= 1");
    if (c.attack.max_iterations < 0) throw ConfigError("config: max_iterations must be >= 0");
    if (c.attack.restarts < 1) throw ConfigError("config: restarts must be >= 1");
    if (c.attack.snapshot_stride < 0) throw ConfigError("config: snapshot_stride must be >= 0");
    if (c.output.threads < 1) throw ConfigError("config: threads must be >= 1");
    if (c.output.directory.empty()) throw ConfigError("config: output directory is empty");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    bool saw_schema = false;
    std::vector<std::string> seen_keys;

    while (std::getline(is, raw)) {
        ++line_no;
        std::string line = raw;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "data" && section != "model" && section != "federation" &&
                section != "defense" && section != "attack" && section != "output")
                fail(line_no, "unknown section [" + section + "]");
            continue;
        }

        std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(line_no, "empty key");

        std::string qualified = section + "." + key;
        for (const std::string& k : seen_keys)
            if (k == qualified) fail(line_no, "duplicate key '" + key + "'");
        seen_keys.push_back(qualified);

        if (section.empty()) {
            if (key == "schema_version") {
                long long v = parse_int(value, line_no);
                if (v != 1) fail(line_no, "unsupported schema_version " + value);
                cfg.schema_version = 1;
                saw_schema = true;
            } else {
                fail(line_no, "unknown top-level key '" + key + "'");
            }
        } else if (section == "data") {
            if (key == "source") {
                check_choice(value, {"synth", "dir"}, key, line_no);
                cfg.data.source = value;
            } else if (key == "path") {
                cfg.data.path = value;
            } else if (key == "synth_kind") {
                check_choice(value, {"blobs", "stripes"}, key, line_no);
                cfg.data.synth_kind = value;
            } else if (key == "synth_samples") {
                cfg.data.synth_samples = static_cast<int>(parse_int(value, line_no));
            } else if (key == "classes") {
                cfg.data.classes = static_cast<int>(parse_int(value, line_no));
            } else if (key == "image_size") {
                cfg.data.image_size = static_cast<int>(parse_int(value, line_no));
            } else if (key == "stats") {
                check_choice(value, {"auto", "explicit"}, key, line_no);
                cfg.data.stats = value;
            } else if (key == "mean") {
                cfg.data.mean = parse_triplet(value, line_no);
            } else if (key == "std") {
                cfg.data.stddev = parse_triplet(value, line_no);
            } else {
                fail(line_no, "unknown key '" + key + "' in [data]");
            }
        } else if (section == "model") {
            if (key == "kind") {
                check_choice(value, {"cnn4", "mlp", "rescnn"}, key, line_no);
                cfg.model.kind = value;
            } else if (key == "hidden") {
                cfg.model.hidden = static_cast<int>(parse_int(value, line_no));
            } else if (key == "init") {
                check_choice(value, {"uniform", "kaiming"}, key, line_no);
                cfg.model.init = value;
            } else if (key == "init_bound") {
                cfg.model.init_bound = parse_double(value, line_no);
            } else {
                fail(line_no, "unknown key '" + key + "' in [model]");
            }
        } else if (section == "federation") {
            if (key == "clients") {
                cfg.federation.clients = static_cast<int>(parse_int(value, line_no));
            } else if (key == "clients_per_round") {
                cfg.federation.clients_per_round = static_cast<int>(parse_int(value, line_no));
            } else if (key == "learning_rate") {
                cfg.federation.learning_rate = parse_double(value, line_no);
            } else if (key == "rounds") {
                cfg.federation.rounds = static_cast<int>(parse_int(value, line_no));
            } else if (key == "local_epochs") {
                cfg.federation.local_epochs = static_cast<int>(parse_int(value, line_no));
            } else if (key == "attack_round") {
                cfg.federation.attack_round = static_cast<int>(parse_int(value, line_no));
            } else {
                fail(line_no, "unknown key '" + key + "' in [federation]");
            }
        } else if (section == "defense") {
            if (key == "mechanism") {
                check_choice(value, {"none", "laplace", "gaussian", "compress"}, key, line_no);
                cfg.defense.mechanism = value;
            } else if (key == "noise_levels") {
                cfg.defense.noise_levels.clear();
                for (const std::string& p : split_list(value))
                    cfg.defense.noise_levels.push_back(parse_double(p, line_no));
            } else if (key == "noise_unit") {
                cfg.defense.noise_unit = parse_double(value, line_no);
            } else if (key == "keep_ratio") {
                cfg.defense.keep_ratio = parse_double(value, line_no);
            } else {
                fail(line_no, "unknown key '" + key + "' in [defense]");
            }
        } else if (section == "attack") {
            if (key == "methods") {
                cfg.attack.methods.clear();
                for (const std::string& p : split_list(value)) {
                    check_choice(p, {"dlg", "idlg", "cpl", "gradinv"}, key, line_no);
                    cfg.attack.methods.push_back(p);
                }
            } else if (key == "samples") {
                cfg.attack.samples = static_cast<int>(parse_int(value, line_no));
            } else if (key == "max_iterations") {
                cfg.attack.max_iterations = static_cast<int>(parse_int(value, line_no));
            } else if (key == "label_mode") {
                check_choice(value, {"preset", "optimize", "infer", "known"}, key, line_no);
                cfg.attack.label_mode = value;
            } else if (key == "tv_weight") {
                cfg.attack.tv_weight = parse_double(value, line_no);
            } else if (key == "restarts") {
                cfg.attack.restarts = static_cast<int>(parse_int(value, line_no));
            } else if (key == "snapshot_stride") {
                cfg.attack.snapshot_stride = static_cast<int>(parse_int(value, line_no));
            } else {
                fail(line_no, "unknown key '" + key + "' in [attack]");
            }
        } else if (section == "output") {
            if (key == "directory") {
                cfg.output.directory = value;
            } else if (key == "seed") {
                long long v = parse_int(value, line_no);
                if (v < 0) fail(line_no, "seed must be >= 0");
                cfg.output.seed = static_cast<std::uint64_t>(v);
            } else if (key == "threads") {
                cfg.output.threads = static_cast<int>(parse_int(value, line_no));
            } else if (key == "save_images") {
                cfg.output.save_images = parse_bool(value, line_no);
            } else {
                fail(line_no, "unknown key '" + key + "' in [output]");
            }
        }
    }
    if (!saw_schema) throw ConfigError("config: missing schema_version");
    validate_semantics(cfg);
    return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "schema_version = " << c.schema_version << "\n\n";
    os << "[data]\n";
    os << "source = " << c.data.source << "\n";
    if (!c.data.path.empty()) os << "path = " << c.data.path << "\n";
    os << "synth_kind = " << c.data.synth_kind << "\n";
    os << "synth_samples = " << c.data.synth_samples << "\n";
    os << "classes = " << c.data.classes << "\n";
    os << "image_size = " << c.data.image_size << "\n";
    os << "stats = " << c.data.stats << "\n";
    os << "mean = " << fmt_double(c.data.mean[0]) << "," << fmt_double(c.data.mean[1]) << ","
       << fmt_double(c.data.mean[2]) << "\n";
    os << "std = " << fmt_double(c.data.stddev[0]) << "," << fmt_double(c.data.stddev[1]) << ","
       << fmt_double(c.data.stddev[2]) << "\n";
    os << "\n[model]\n";
    os << "kind = " << c.model.kind << "\n";
    os << "hidden = " << c.model.hidden << "\n";
    os << "init = " << c.model.init << "\n";
    os << "init_bound = " << fmt_double(c.model.init_bound) << "\n";
    os << "\n[federation]\n";
    os << "clients = " << c.federation.clients << "\n";
    os << "clients_per_round = " << c.federation.clients_per_round << "\n";
    os << "learning_rate = " << fmt_double(c.federation.learning_rate) << "\n";
    os << "rounds = " << c.federation.rounds << "\n";
    os << "local_epochs = " << c.federation.local_epochs << "\n";
    os << "attack_round = " << c.federation.attack_round << "\n";
    os << "\n[defense]\n";
    os << "mechanism = " << c.defense.mechanism << "\n";
    os << "noise_levels = ";
    for (std::size_t i = 0; i < c.defense.noise_levels.size(); ++i)
        os << (i ? "," : "") << fmt_double(c.defense.noise_levels[i]);
    os << "\n";
    os << "noise_unit = " << fmt_double(c.defense.noise_unit) << "\n";
    os << "keep_ratio = " << fmt_double(c.defense.keep_ratio) << "\n";
    os << "\n[attack]\n";
    os << "methods = ";
    for (std::size_t i = 0; i < c.attack.methods.size(); ++i)
        os << (i ? "," : "") << c.attack.methods[i];
    os << "\n";
    os << "samples = " << c.attack.samples << "\n";
    os << "max_iterations = " << c.attack.max_iterations << "\n";
    os << "label_mode = " << c.attack.label_mode << "\n";
    os << "tv_weight = " << fmt_double(c.attack.tv_weight) << "\n";
    os << "restarts = " << c.attack.restarts << "\n";
    os << "snapshot_stride = " << c.attack.snapshot_stride << "\n";
    os << "\n[output]\n";
    os << "directory = " << c.output.directory << "\n";
    os << "seed = " << c.output.seed << "\n";
    os << "threads = " << c.output.threads << "\n";
    os << "save_images = " << (c.output.save_images ? "true" : "false") << "\n";
    return os.str();
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return serialize_config(a) == serialize_config(b);
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
    PreparedData out;
    if (config.data.source == "synth") {
        out.raw = synth_dataset(mix_seed(seed, 0x64617461ULL), config.data.synth_samples,
                                config.data.classes, config.data.synth_kind == "blobs"
                                                          ? SynthKind::blobs
                                                          : SynthKind::stripes,
                                config.data.image_size);
        out.classes = config.data.classes;
    } else {
        LoadResult lr = load_image_dir(config.data.path);
        out.classes = static_cast<int>(lr.class_names.size());
        if (out.classes < 2)
            throw Error("dataset at " + config.data.path + " has fewer than 2 classes");
        for (ImageSample& s : lr.samples) {
            s.pixels = resize_bilinear(s.pixels, config.data.image_size, config.data.image_size);
            out.raw.push_back(std::move(s));
        }
    }

    if (config.data.stats == "auto") {
        out.stats = compute_stats(out.raw);
    } else {
        out.stats.mean = config.data.mean;
        out.stats.stddev = config.data.stddev;
    }

    out.examples.reserve(out.raw.size());
    for (const ImageSample& s : out.raw)
        out.examples.push_back(Example{normalize(s.pixels, out.stats), s.label});
    return out;
}

ModelSpec make_model(const ExperimentConfig& config, int classes) {
    Shape in{3, config.data.image_size, config.data.image_size};
    if (config.model.kind == "cnn4") return build_cnn4(in, classes);
    if (config.model.kind == "mlp") return build_mlp(in, config.model.hidden, classes);
    return build_rescnn(in, classes);
}

AttackConfig make_attack_config(const ExperimentConfig& config, AttackMethod method,
                                std::uint64_t seed, int victim_label) {
    AttackConfig cfg = attack_preset(method);
    cfg.seed = seed;
    if (config.attack.max_iterations > 0) cfg.max_iterations = config.attack.max_iterations;
    if (config.attack.tv_weight >= 0.0) cfg.tv_weight = config.attack.tv_weight;
    cfg.restarts = config.attack.restarts;
    cfg.snapshot_stride = config.attack.snapshot_stride;
    if (config.attack.label_mode == "optimize") cfg.label_mode = LabelMode::optimize_soft;
    else if (config.attack.label_mode == "infer") cfg.label_mode = LabelMode::infer_analytic;
    else if (config.attack.label_mode == "known") cfg.label_mode = LabelMode::known;
    if (cfg.label_mode == LabelMode::known) cfg.known_label = victim_label;
    return cfg;
}

namespace {

Parameters params_at_round(const ModelSpec& spec, const Parameters& init,
                           const ExperimentConfig& cfg, const std::vector<Example>& examples,
                           int rounds) {
    if (rounds == 0) return init;
    FedConfig fc;
    fc.clients = cfg.federation.clients;
    fc.clients_per_round = cfg.federation.clients_per_round;
    fc.learning_rate = cfg.federation.learning_rate;
    fc.rounds = rounds;
    fc.local_epochs = cfg.federation.local_epochs;
    fc.seed = mix_seed(cfg.output.seed, 0x666564ULL);
    fc.partitions = make_even_partitions(static_cast<int>(examples.size()), fc.clients);
    return run_rounds(spec, init, fc, examples);
}

std::string noise_dir_name(double level) { return "noise" + fmt_short(level); }

void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<CellSummary>& cells) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << "method,noise_level,n_samples,asr,mean_ssim_success,mean_mse_success,mean_seconds\n";
    for (const CellSummary& c : cells) {
        os << c.method << ',' << fmt_short(c.noise_level) << ',' << c.stats.n_samples << ','
           << fmt_short(c.stats.asr) << ',';
        if (c.stats.mean_ssim_success) os << fmt_short(*c.stats.mean_ssim_success);
        os << ',';
        if (c.stats.mean_mse_success) os << fmt_short(*c.stats.mean_mse_success);
        os << ',' << fmt_short(c.mean_seconds) << "\n";
    }
}

void write_records_jsonl(const std::filesystem::path& path,
                         const std::vector<SampleRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    for (const SampleRecord& r : records) {
        nlohmann::json j;
        j["method"] = r.method;
        j["noise_level"] = r.noise_level;
        j["sample_pos"] = r.sample_pos;
        j["dataset_index"] = r.dataset_index;
        j["source_id"] = r.source_id;
        j["label_true"] = r.label_true;
        j["label_attack"] = r.label_attack;
        j["seed"] = r.seed;
        j["iterations"] = r.iterations;
        j["stop_reason"] = r.stop_reason;
        j["final_objective"] = r.final_objective;
        j["best_objective"] = r.best_objective;
        j["ssim"] = r.ssim_value;
        j["mse"] = r.mse_value;
        j["success"] = r.success;
        j["wall_seconds"] = r.wall_seconds;
        if (!r.error.empty()) j["error"] = r.error;
        os << j.dump() << "\n";
    }
}

void write_rounds_csv(const std::filesystem::path& path, const std::vector<RoundRecord>& rounds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << "round,mean_loss,participating_client_ids\n";
    for (const RoundRecord& r : rounds) {
        os << r.round << ',' << fmt_short(r.mean_loss) << ',';
        for (std::size_t i = 0; i < r.client_ids.size(); ++i)
            os << (i ? ";" : "") << r.client_ids[i];
        os << "\n";
    }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOverrides& overrides) {
    namespace fs = std::filesystem;
    ExperimentConfig cfg = config;
    if (overrides.seed) cfg.output.seed = *overrides.seed;

    std::string out_dir = cfg.output.directory;
    if (const char* env = std::getenv(kOutputDirEnvVar); env && *env) out_dir = env;
    if (overrides.output_dir) out_dir = *overrides.output_dir;

    ExperimentResult result;
    result.output_dir = fs::path(out_dir);
    fs::create_directories(result.output_dir);

    const std::uint64_t seed = cfg.output.seed;
    PreparedData data = prepare_data(cfg, seed);
    const int n = static_cast<int>(data.examples.size());
    if (cfg.attack.samples > n)
        throw Error("config requests " + std::to_string(cfg.attack.samples) +
                    " attack samples but the dataset has " + std::to_string(n));

    ModelSpec spec = make_model(cfg, data.classes);
    Parameters init =
        init_params(spec, mix_seed(seed, 0x6d6f64656cULL),
                    cfg.model.init == "uniform" ? InitScheme::uniform : InitScheme::kaiming,
                    cfg.model.init_bound);

    // full simulated run for the round log, then the attacker's snapshot
    if (cfg.federation.rounds > 0) {
        FedConfig fc;
        fc.clients = cfg.federation.clients;
        fc.clients_per_round = cfg.federation.clients_per_round;
        fc.learning_rate = cfg.federation.learning_rate;
        fc.rounds = cfg.federation.rounds;
        fc.local_epochs = cfg.federation.local_epochs;
        fc.seed = mix_seed(seed, 0x666564ULL);
        fc.partitions = make_even_partitions(n, fc.clients);
        run_rounds(spec, init, fc, data.examples, &result.rounds);
    }
    Parameters attacked =
        params_at_round(spec, init, cfg, data.examples, cfg.federation.attack_round);

    // seeded choice of attacked samples
    std::vector<int> selection(static_cast<std::size_t>(n));
    std::iota(selection.begin(), selection.end(), 0);
    Rng sel_rng(mix_seed(seed, 0x73656c0aULL));
    for (int j = 0; j < cfg.attack.samples; ++j) {
        std::size_t pick = static_cast<std::size_t>(j) +
                           static_cast<std::size_t>(sel_rng.below(
                               static_cast<std::uint64_t>(n - j)));
        std::swap(selection[static_cast<std::size_t>(j)], selection[pick]);
    }
    selection.resize(static_cast<std::size_t>(cfg.attack.samples));

    struct Job {
        std::size_t method_idx;
        std::size_t level_idx;
        int sample_pos;
    };
    std::vector<Job> jobs;
    for (std::size_t mi = 0; mi < cfg.attack.methods.size(); ++mi)
        for (std::size_t li = 0; li < cfg.defense.noise_levels.size(); ++li)
            for (int sp = 0; sp < cfg.attack.samples; ++sp) jobs.push_back(Job{mi, li, sp});

    std::vector<SampleRecord> records(jobs.size());
    std::vector<AttackResult> attack_results(jobs.size());

    auto run_job = [&](std::size_t ji) {
        const Job& job = jobs[ji];
        const std::string& method_name = cfg.attack.methods[job.method_idx];
        AttackMethod method = attack_method_from_name(method_name);
        double level = cfg.defense.noise_levels[job.level_idx];
        int ds_index = selection[static_cast<std::size_t>(job.sample_pos)];
        const ImageSample& victim_raw = data.raw[static_cast<std::size_t>(ds_index)];
        const Example& victim = data.examples[static_cast<std::size_t>(ds_index)];

        std::uint64_t cell_seed = mix_seed(mix_seed(mix_seed(seed, job.method_idx), job.level_idx),
                                           static_cast<std::uint64_t>(job.sample_pos));

        SampleRecord rec;
        rec.method = method_name;
        rec.noise_level = level;
        rec.sample_pos = job.sample_pos;
        rec.dataset_index = ds_index;
        rec.source_id = victim_raw.source_id;
        rec.label_true = victim.label;
        rec.seed = cell_seed;

        try {
            ClientUpdate target =
                client_update(spec, attacked, {victim}, /*client_id=*/0,
                              /*round=*/cfg.federation.attack_round);
            DefenseConfig dc;
            dc.mechanism = mechanism_from_name(cfg.defense.mechanism);
            dc.noise_level = level;
            dc.base_unit = cfg.defense.noise_unit;
            dc.keep_ratio = cfg.defense.keep_ratio;
            dc.seed = mix_seed(cell_seed, 0x646566ULL);
            ClientUpdate defended = perturb(target, dc);

            AttackConfig ac = make_attack_config(cfg, method, mix_seed(cell_seed, 0x61747400ULL),
                                                 victim.label);
            AttackResult ar = run_attack(spec, attacked, defended, ac, data.stats, &victim_raw);
            rec.label_attack = ar.label;
            rec.iterations = ar.iterations;
            rec.stop_reason = stop_reason_name(ar.stop_reason);
            rec.final_objective = ar.final_objective;
            rec.best_objective = ar.best_objective;
            rec.ssim_value = ar.final_ssim.value_or(0.0);
            rec.mse_value = ar.final_mse.value_or(0.0);
            rec.success = rec.ssim_value >= 0.9;
            rec.wall_seconds = ar.wall_seconds;
            attack_results[ji] = std::move(ar);
        } catch (const Error& e) {
            rec.error = e.what();
            rec.stop_reason = "error";
            rec.ssim_value = 0.0;
            rec.mse_value = 1.0;
            rec.success = false;
        }
        records[ji] = std::move(rec);
    };

    int threads = std::max(1, cfg.output.threads);
    if (threads == 1) {
        for (std::size_t ji = 0; ji < jobs.size(); ++ji) run_job(ji);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t ji = next.fetch_add(1); ji < jobs.size();
                     ji = next.fetch_add(1))
                    run_job(ji);
            });
        for (std::thread& t : pool) t.join();
    }

    result.records = std::move(records);

    // per-cell summaries in config order
    for (std::size_t mi = 0; mi < cfg.attack.methods.size(); ++mi)
        for (std::size_t li = 0; li < cfg.defense.noise_levels.size(); ++li) {
            std::vector<ScorePair> scores;
            double seconds = 0.0;
            for (std::size_t ji = 0; ji < jobs.size(); ++ji) {
                if (jobs[ji].method_idx != mi || jobs[ji].level_idx != li) continue;
                scores.push_back(
                    ScorePair{result.records[ji].ssim_value, result.records[ji].mse_value});
                seconds += result.records[ji].wall_seconds;
            }
            CellSummary cell;
            cell.method = cfg.attack.methods[mi];
            cell.noise_level = cfg.defense.noise_levels[li];
            cell.stats = summarize_successful(scores);
            cell.mean_seconds = seconds / static_cast<double>(scores.size());
            result.summary.push_back(std::move(cell));
        }

    write_summary_csv(result.output_dir / "summary.csv", result.summary);
    write_records_jsonl(result.output_dir / "records.jsonl", result.records);
    if (cfg.federation.rounds > 0)
        write_rounds_csv(result.output_dir / "rounds.csv", result.rounds);

    if (cfg.output.save_images) {
        for (std::size_t ji = 0; ji < jobs.size(); ++ji) {
            const Job& job = jobs[ji];
            if (!result.records[ji].error.empty()) continue;
            fs::path dir = result.output_dir / "images" / cfg.attack.methods[job.method_idx] /
                           noise_dir_name(cfg.defense.noise_levels[job.level_idx]) /
                           ("sample" + std::to_string(job.sample_pos));
            fs::create_directories(dir);
            int ds_index = selection[static_cast<std::size_t>(job.sample_pos)];
            write_png(dir / "original.png",
                      data.raw[static_cast<std::size_t>(ds_index)].pixels);
            write_png(dir / "recon.png", attack_results[ji].reconstruction);
            for (const auto& [iter, img] : attack_results[ji].snapshots) {
                char name[32];
                std::snprintf(name, sizeof name, "iter%06d.png", iter);
                write_png(dir / name, img);
            }
        }
    }
    return result;
}

}  // namespace fedinv
