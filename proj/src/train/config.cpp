#include "ivfuse/train/trainer.hpp"

#include <fstream>
#include <sstream>

namespace ivfuse::train {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
    std::istringstream is(v);
    T out;
    is >> out;
    if (is.fail() || !is.eof()) throw ConfigError("config: bad value for " + key + ": " + v);
    return out;
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));

        if (key == "epochs") cfg.epochs = parse_num<int>(val, key);
        else if (key == "batch_size") cfg.batch_size = parse_num<int>(val, key);
        else if (key == "lr") cfg.lr = parse_num<double>(val, key);
        else if (key == "plateau_patience") cfg.plateau_patience = parse_num<int>(val, key);
        else if (key == "plateau_factor") cfg.plateau_factor = parse_num<double>(val, key);
        else if (key == "plateau_min_delta") cfg.plateau_min_delta = parse_num<double>(val, key);
        else if (key == "seed") cfg.seed = parse_num<std::uint64_t>(val, key);
        else if (key == "use_dsm") cfg.net.use_dsm = parse_bool(val, key);
        else if (key == "use_det_loss") cfg.use_det_loss = parse_bool(val, key);
        else if (key == "use_seg_loss") cfg.use_seg_loss = parse_bool(val, key);
        else if (key == "head_warmup_steps") cfg.head_warmup_steps = parse_num<int>(val, key);
        else if (key == "class_count") cfg.class_count = parse_num<int>(val, key);
        else if (key == "head_channels") cfg.head_channels = parse_num<std::int64_t>(val, key);
        else if (key == "head_backend") cfg.head_backend = val;
        else if (key == "external_det_cmd") cfg.external_det_cmd = val;
        else if (key == "external_seg_cmd") cfg.external_seg_cmd = val;
        else if (key == "external_workdir") cfg.external_workdir = val;
        else if (key == "channels") cfg.net.channels = parse_num<std::int64_t>(val, key);
        else if (key == "blocks") cfg.net.blocks = parse_num<std::int64_t>(val, key);
        else if (key == "radix") cfg.net.radix = parse_num<std::int64_t>(val, key);
        else if (key == "reduction") cfg.net.reduction = parse_num<std::int64_t>(val, key);
        else if (key == "nat_window") cfg.net.nat_window = parse_num<std::int64_t>(val, key);
        else if (key == "nat_heads") cfg.net.nat_heads = parse_num<std::int64_t>(val, key);
        else if (key == "sa_hidden") cfg.net.sa_hidden = parse_num<std::int64_t>(val, key);
        else if (key == "sa_kernel") cfg.net.sa_kernel = parse_num<std::int64_t>(val, key);
        else if (key == "shared_encoder") cfg.net.shared_encoder = parse_bool(val, key);
        else if (key == "shared_lsm") cfg.net.shared_lsm = parse_bool(val, key);
        else if (key == "cross_branches") cfg.net.cross_branches = parse_bool(val, key);
        else if (key == "alpha1") cfg.loss.alpha1 = parse_num<double>(val, key);
        else if (key == "alpha2") cfg.loss.alpha2 = parse_num<double>(val, key);
        else if (key == "alpha3") cfg.loss.alpha3 = parse_num<double>(val, key);
        else if (key == "ssim_window") cfg.loss.ssim_window = parse_num<std::int64_t>(val, key);
        else throw ConfigError("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace ivfuse::train
