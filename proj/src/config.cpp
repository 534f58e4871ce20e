#include "bconv/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "bconv/sensitivity.hpp"

namespace bconv {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

const std::set<std::string>& allowed_keys() {
    static const std::set<std::string> keys = {
        "run.seed", "run.seeds", "run.out", "run.jobs", "run.overwrite", "run.timer",
        "model.arch", "model.width_divisor", "model.num_classes", "model.image_size",
        "data.source", "data.dir", "data.n_per_class", "data.max_per_class", "data.augment",
        "data.resize_to", "data.crop_to",
        "train.epochs", "train.lr0", "train.t_max", "train.momentum", "train.weight_decay",
        "train.batch_size",
        "basis.mode", "basis.r", "basis.beta", "basis.layers",
        "skip.skip",
        "sanity.extraction", "sanity.r_fractions", "sanity.resume_fraction",
        "search.n_buckets", "search.sample_count",
    };
    return keys;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
    ConfigFile file;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        }
        const std::string full = section + "." + key;
        if (file.values.count(full)) {
            throw ConfigError("duplicate key: " + full);
        }
        file.values[full] = value;
    }
    return file;
}

ConfigFile ConfigFile::load(const std::string& path) {
    return parse(read_text_file(path));
}

std::string ConfigFile::get(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

std::int64_t ConfigFile::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + " expects an integer, got '" + it->second + "'");
    }
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + " expects a number, got '" + it->second + "'");
    }
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("key " + key + " expects true/false, got '" + it->second + "'");
}

std::set<int> parse_layer_set(const std::string& text) {
    if (text == "light") return light_group();
    if (text == "heavy") return heavy_group();
    if (text == "all") {
        std::set<int> all;
        for (int i = 1; i <= 20; ++i) all.insert(i);
        return all;
    }
    std::set<int> out;
    if (trim(text).empty()) return out;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        part = trim(part);
        try {
            std::size_t pos = 0;
            const int v = std::stoi(part, &pos);
            if (pos != part.size() || v < 1) throw std::invalid_argument("bad");
            out.insert(v);
        } catch (const std::exception&) {
            throw ConfigError("bad layer ordinal '" + part + "' in layer set");
        }
    }
    return out;
}

std::string layer_set_to_string(const std::set<int>& layers) {
    std::string s;
    for (int o : layers) {
        if (!s.empty()) s += ",";
        s += std::to_string(o);
    }
    return s;
}

RunConfig parse_run_config(const ConfigFile& file) {
    for (const auto& [key, value] : file.values) {
        if (!allowed_keys().count(key)) {
            throw ConfigError("unknown config key: " + key);
        }
        (void)value;
    }

    RunConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(file.get_int("run.seed", 1));
    if (file.has("run.seeds")) {
        std::istringstream in(file.get("run.seeds", ""));
        std::string part;
        while (std::getline(in, part, ',')) {
            cfg.seeds.push_back(static_cast<std::uint64_t>(std::stoll(trim(part))));
        }
    }
    cfg.out_dir = file.get("run.out", "out");
    cfg.jobs = static_cast<int>(file.get_int("run.jobs", 1));
    cfg.overwrite = file.get_bool("run.overwrite", false);
    cfg.timer = timer_kind_from_string(file.get("run.timer", "modeled"));

    cfg.model.arch = file.get("model.arch", "micro_resnet18");
    cfg.model.width_divisor = file.get_int("model.width_divisor", 8);
    cfg.model.num_classes = static_cast<int>(file.get_int("model.num_classes", 10));
    cfg.model.image_size = file.get_int("model.image_size", 32);

    cfg.data_source = file.get("data.source", "synthetic");
    if (cfg.data_source != "synthetic" && cfg.data_source != "cifar10") {
        throw ConfigError("data.source must be synthetic or cifar10");
    }
    cfg.data_dir = file.get("data.dir", "");
    cfg.n_per_class = static_cast<int>(file.get_int("data.n_per_class", 50));
    cfg.max_per_class = static_cast<int>(file.get_int("data.max_per_class", 0));
    cfg.augment.policy = augment_policy_from_string(file.get("data.augment", "none"));
    cfg.augment.resize_to = file.get_int("data.resize_to", 0);
    cfg.augment.crop_to = file.get_int("data.crop_to", 0);

    cfg.train.epochs = file.get_int("train.epochs", 20);
    cfg.train.lr0 = file.get_double("train.lr0", 0.1);
    cfg.train.t_max = file.get_int("train.t_max", cfg.train.epochs);
    cfg.train.momentum = file.get_double("train.momentum", 0.9);
    cfg.train.weight_decay = file.get_double("train.weight_decay", 0.0005);
    cfg.train.batch_size = file.get_int("train.batch_size", 64);
    cfg.train.seed = cfg.seed;
    if (cfg.train.epochs < 0 || cfg.train.t_max < 1 || cfg.train.lr0 <= 0.0 ||
        cfg.train.batch_size < 1) {
        throw ConfigError("train section: need epochs >= 0, t_max >= 1, lr0 > 0, batch_size >= 1");
    }

    cfg.basis_mode = basis_mode_from_string(file.get("basis.mode", "restricted"));
    cfg.r_or_alpha = file.get_double("basis.r", 0.5);
    cfg.beta = file.get_double("basis.beta", 0.25);
    cfg.basis_layers = parse_layer_set(file.get("basis.layers", ""));

    cfg.skip = file.get_double("skip.skip", 0.0);

    cfg.extraction = extraction_from_string(file.get("sanity.extraction", "svd"));
    if (file.has("sanity.r_fractions")) {
        cfg.r_fractions.clear();
        std::istringstream in(file.get("sanity.r_fractions", ""));
        std::string part;
        while (std::getline(in, part, ',')) cfg.r_fractions.push_back(std::stod(trim(part)));
    }
    cfg.resume_fraction = file.get_double("sanity.resume_fraction", 0.7);

    cfg.n_buckets = static_cast<int>(file.get_int("search.n_buckets", 4));
    cfg.sample_count = file.get_int("search.sample_count", 0);
    return cfg;
}

std::string echo_config(const RunConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "[run]\n";
    os << "seed = " << cfg.seed << "\n";
    if (!cfg.seeds.empty()) {
        os << "seeds = ";
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
            os << (i ? "," : "") << cfg.seeds[i];
        }
        os << "\n";
    }
    os << "out = " << cfg.out_dir << "\n";
    os << "jobs = " << cfg.jobs << "\n";
    os << "overwrite = " << (cfg.overwrite ? "true" : "false") << "\n";
    os << "timer = " << (cfg.timer == TimerKind::Modeled ? "modeled" : "wall") << "\n";
    os << "\n[model]\n";
    os << "arch = " << cfg.model.arch << "\n";
    os << "width_divisor = " << cfg.model.width_divisor << "\n";
    os << "num_classes = " << cfg.model.num_classes << "\n";
    os << "image_size = " << cfg.model.image_size << "\n";
    os << "\n[data]\n";
    os << "source = " << cfg.data_source << "\n";
    if (!cfg.data_dir.empty()) os << "dir = " << cfg.data_dir << "\n";
    os << "n_per_class = " << cfg.n_per_class << "\n";
    os << "max_per_class = " << cfg.max_per_class << "\n";
    const char* augment_name = cfg.augment.policy == AugmentPolicy::None ? "none"
                               : cfg.augment.policy == AugmentPolicy::Pad4Crop32Flip
                                   ? "pad4_crop32_flip"
                                   : "resize_crop";
    os << "augment = " << augment_name << "\n";
    os << "resize_to = " << cfg.augment.resize_to << "\n";
    os << "crop_to = " << cfg.augment.crop_to << "\n";
    os << "\n[train]\n";
    os << "epochs = " << cfg.train.epochs << "\n";
    os << "lr0 = " << cfg.train.lr0 << "\n";
    os << "t_max = " << cfg.train.t_max << "\n";
    os << "momentum = " << cfg.train.momentum << "\n";
    os << "weight_decay = " << cfg.train.weight_decay << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "\n[basis]\n";
    os << "mode = " << to_string(cfg.basis_mode) << "\n";
    os << "r = " << cfg.r_or_alpha << "\n";
    os << "beta = " << cfg.beta << "\n";
    os << "layers = " << layer_set_to_string(cfg.basis_layers) << "\n";
    os << "\n[skip]\n";
    os << "skip = " << cfg.skip << "\n";
    os << "\n[sanity]\n";
    os << "extraction = " << (cfg.extraction == ExtractionKind::SVD ? "svd" : "qr") << "\n";
    os << "r_fractions = ";
    for (std::size_t i = 0; i < cfg.r_fractions.size(); ++i) {
        os << (i ? "," : "") << cfg.r_fractions[i];
    }
    os << "\n";
    os << "resume_fraction = " << cfg.resume_fraction << "\n";
    os << "\n[search]\n";
    os << "n_buckets = " << cfg.n_buckets << "\n";
    os << "sample_count = " << cfg.sample_count << "\n";
    return os.str();
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << content;
}

}  // namespace bconv
