#include "evocnn/run_config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "evocnn/errors.hpp"

namespace evocnn {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
        throw ConfigError("config: bad value for " + key + ": '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad value for " + key + ": '" + value + "'");
}

// Shortest decimal form that parses back to the same value.
template <typename T>
std::string format_number(T v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::vector<double> parse_prob_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_number<double>(key, trim(item)));
    }
    return out;
}

} // namespace

NumericMode parse_numeric_mode(const std::string& text) {
    if (text == "fp") return NumericMode::fp();
    if (text == "fx16") return NumericMode::fx(FxFormat{16, 8});
    if (text.size() > 4 && text.substr(0, 3) == "fx(" && text.back() == ')') {
        const std::string inner = text.substr(3, text.size() - 4);
        const std::size_t comma = inner.find(',');
        if (comma != std::string::npos) {
            FxFormat fmt{parse_number<int>("numeric_mode", trim(inner.substr(0, comma))),
                         parse_number<int>("numeric_mode", trim(inner.substr(comma + 1)))};
            if (!fmt.valid()) {
                throw ConfigError("numeric_mode: invalid fixed-point format " + text);
            }
            return NumericMode::fx(fmt);
        }
    }
    throw ConfigError("numeric_mode must be fp, fx16 or fx(N,F), got '" + text + "'");
}

std::string numeric_mode_string(const NumericMode& mode) {
    if (mode.kind == NumericMode::Kind::fp) return "fp";
    if (mode.format.total_bits == 16 && mode.format.frac_bits == 8) return "fx16";
    return "fx(" + std::to_string(mode.format.total_bits) + "," +
           std::to_string(mode.format.frac_bits) + ")";
}

RunConfig default_run_config(const std::string& dataset) {
    RunConfig cfg;
    if (dataset == "mnist") {
        return cfg;  // struct defaults are the mnist setup
    }
    if (dataset == "cifar10") {
        cfg.dataset = "cifar10";
        cfg.data_dir = "data/cifar10";
        cfg.evo.pop_size = 12;
        cfg.evo.age_max = 6;
        cfg.evo.a_min = 0.60;
        cfg.evo.bounds.max_filters = 20;
        cfg.evo.bounds.fc_init = 70;
        return cfg;
    }
    throw ConfigError("dataset must be mnist or cifar10, got '" + dataset + "'");
}

std::string dump_run_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "dataset = " << cfg.dataset << "\n";
    out << "data_dir = " << cfg.data_dir << "\n";
    out << "out_dir = " << cfg.out_dir << "\n";
    out << "seed = " << cfg.evo.seed << "\n";
    out << "numeric_mode = " << numeric_mode_string(cfg.evo.eval_mode) << "\n";
    out << "subsample_n = " << cfg.subsample_n << "\n";
    out << "checkpoint_every = " << cfg.checkpoint_every << "\n";
    out << "seed_genome_path = " << cfg.seed_genome_path << "\n";
    out << "g_max = " << cfg.evo.g_max << "\n";
    out << "pop_size = " << cfg.evo.pop_size << "\n";
    out << "p_cross = " << format_number(cfg.evo.p_cross) << "\n";
    out << "p_mut = " << format_number(cfg.evo.p_mut) << "\n";
    out << "age_max = " << cfg.evo.age_max << "\n";
    out << "mo_probs = ";
    for (std::size_t i = 0; i < cfg.evo.mo_probs.size(); ++i) {
        if (i) out << ",";
        out << format_number(cfg.evo.mo_probs[i]);
    }
    out << "\n";
    out << "k = " << format_number(cfg.evo.k) << "\n";
    out << "a_min = " << format_number(cfg.evo.a_min) << "\n";
    out << "batch_size = " << cfg.evo.batch_size << "\n";
    out << "epochs_per_training = " << cfg.evo.epochs_per_training << "\n";
    out << "num_classes = " << cfg.evo.num_classes << "\n";
    out << "parallel_candidates = " << (cfg.evo.parallel_candidates ? "true" : "false") << "\n";
    out << "max_filters = " << cfg.evo.bounds.max_filters << "\n";
    out << "max_pool = " << cfg.evo.bounds.max_pool << "\n";
    out << "fc_min = " << cfg.evo.bounds.fc_min << "\n";
    out << "fc_max = " << cfg.evo.bounds.fc_max << "\n";
    out << "fc_init = " << cfg.evo.bounds.fc_init << "\n";
    out << "max_genes = " << cfg.evo.bounds.max_genes << "\n";
    out << "init_genes_min = " << cfg.evo.bounds.init_genes_min << "\n";
    out << "init_genes_max = " << cfg.evo.bounds.init_genes_max << "\n";
    out << "lr_init = " << format_number(cfg.evo.bounds.lr_init) << "\n";
    out << "lr_min = " << format_number(cfg.evo.bounds.lr_min) << "\n";
    out << "lr_max = " << format_number(cfg.evo.bounds.lr_max) << "\n";
    return out.str();
}

RunConfig parse_run_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
            throw ConfigError("config: duplicate key '" + key + "'");
        }
    }

    auto it = kv.find("dataset");
    RunConfig cfg = default_run_config(it == kv.end() ? "mnist" : it->second);
    kv.erase("dataset");

    for (const auto& [key, value] : kv) {
        if (key == "data_dir") cfg.data_dir = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "seed") cfg.evo.seed = parse_number<uint64_t>(key, value);
        else if (key == "numeric_mode") cfg.evo.eval_mode = parse_numeric_mode(value);
        else if (key == "subsample_n") cfg.subsample_n = parse_number<long long>(key, value);
        else if (key == "checkpoint_every") cfg.checkpoint_every = parse_number<int>(key, value);
        else if (key == "seed_genome_path") cfg.seed_genome_path = value;
        else if (key == "g_max") cfg.evo.g_max = parse_number<int>(key, value);
        else if (key == "pop_size") cfg.evo.pop_size = parse_number<int>(key, value);
        else if (key == "p_cross") cfg.evo.p_cross = parse_number<double>(key, value);
        else if (key == "p_mut") cfg.evo.p_mut = parse_number<double>(key, value);
        else if (key == "age_max") cfg.evo.age_max = parse_number<int>(key, value);
        else if (key == "mo_probs") cfg.evo.mo_probs = parse_prob_list(key, value);
        else if (key == "k") cfg.evo.k = parse_number<double>(key, value);
        else if (key == "a_min") cfg.evo.a_min = parse_number<double>(key, value);
        else if (key == "batch_size") cfg.evo.batch_size = parse_number<int>(key, value);
        else if (key == "epochs_per_training")
            cfg.evo.epochs_per_training = parse_number<int>(key, value);
        else if (key == "num_classes") cfg.evo.num_classes = parse_number<int>(key, value);
        else if (key == "parallel_candidates")
            cfg.evo.parallel_candidates = parse_bool(key, value);
        else if (key == "max_filters") cfg.evo.bounds.max_filters = parse_number<int>(key, value);
        else if (key == "max_pool") cfg.evo.bounds.max_pool = parse_number<int>(key, value);
        else if (key == "fc_min") cfg.evo.bounds.fc_min = parse_number<int>(key, value);
        else if (key == "fc_max") cfg.evo.bounds.fc_max = parse_number<int>(key, value);
        else if (key == "fc_init") cfg.evo.bounds.fc_init = parse_number<int>(key, value);
        else if (key == "max_genes") cfg.evo.bounds.max_genes = parse_number<int>(key, value);
        else if (key == "init_genes_min")
            cfg.evo.bounds.init_genes_min = parse_number<int>(key, value);
        else if (key == "init_genes_max")
            cfg.evo.bounds.init_genes_max = parse_number<int>(key, value);
        else if (key == "lr_init") cfg.evo.bounds.lr_init = parse_number<float>(key, value);
        else if (key == "lr_min") cfg.evo.bounds.lr_min = parse_number<float>(key, value);
        else if (key == "lr_max") cfg.evo.bounds.lr_max = parse_number<float>(key, value);
        else throw ConfigError("config: unknown key '" + key + "'");
    }
    if (cfg.subsample_n < 0) throw ConfigError("subsample_n must be non-negative");
    if (cfg.checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write config file: " + path);
    out << dump_run_config(cfg);
    if (!out) throw DataError("failed writing config file: " + path);
}

} // namespace evocnn
