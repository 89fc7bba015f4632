#include "psinger/config.hpp"

#include <fstream>
#include <sstream>

#include "psinger/rng.hpp"

using nlohmann::json;

namespace psinger {

namespace {

json default_tree() {
    return json{
        {"seed", 7},
        {"audio",
         {{"sample_rate", 48000},
          {"fft", 1024},
          {"hop", 256},
          {"mel_bins", 80},
          {"fps", 25},
          {"lip_size", 48}}},
        {"model",
         {{"hidden", 256},
          {"heads", 2},
          {"encoder_layers", 4},
          {"encoder_kernel", 9},
          {"dropout", 0.1},
          {"speaker_layers", 2},
          {"visual_channels", 16},
          {"decoder_layers", 20},
          {"decoder_channels", 64},
          {"pitch_layers", 4},
          {"pitch_channels", 32}}},
        {"vcfm", {{"blocks", 2}, {"enabled", true}, {"zero_init", true}, {"heads", 2}}},
        {"dur", {{"kernel", 3}, {"dropout", 0.1}}},
        {"pitch",
         {{"steps", 100}, {"beta_min", 1e-4}, {"beta_max", 0.06}, {"uv_threshold", 0.5}}},
        {"diffusion", {{"steps", 100}, {"beta_min", 1e-4}, {"beta_max", 0.06}}},
        {"rvq", {{"books", 4}, {"entries", 64}, {"beta", 0.25}}},
        {"style", {{"to_decoder", true}}},
        {"loss", {{"lambda_r", 1.0}, {"lambda_d", 1.0}, {"lambda_p", 1.0}, {"lambda_c", 1.0}}},
        {"training",
         {{"batch_size", 4},
          {"lr", 1e-3},
          {"warmup", 400},
          {"clip_norm", 1.0},
          {"mel_draws", 1},
          {"ema", 0.0},
          {"stage1_steps", 3000},
          {"stage2_steps", 1000},
          {"stage2_ft_scale", 0.1},
          {"stage2_freeze_stage1", false},
          {"log_every", 10},
          {"checkpoint_every", 1000}}},
    };
}

void validate_and_fill(json& out, const json& in, const json& def, const std::string& path) {
    for (auto it = in.begin(); it != in.end(); ++it) {
        std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!def.contains(it.key()))
            throw std::runtime_error("config: unknown key '" + key + "'");
        const json& dv = def.at(it.key());
        if (dv.is_object()) {
            if (!it.value().is_object())
                throw std::runtime_error("config: '" + key + "' must be an object");
            validate_and_fill(out[it.key()], it.value(), dv, key);
        } else {
            const json& v = it.value();
            if (dv.is_boolean() != v.is_boolean() || (dv.is_number() && !v.is_number()) ||
                (dv.is_string() && !v.is_string()))
                throw std::runtime_error("config: '" + key + "' has wrong type");
            out[it.key()] = v;
        }
    }
    for (auto it = def.begin(); it != def.end(); ++it)
        if (!out.contains(it.key())) out[it.key()] = it.value();
}

const json* walk(const json& j, const std::string& dotted) {
    const json* cur = &j;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!cur->contains(part)) return nullptr;
        cur = &cur->at(part);
    }
    return cur;
}

}  // namespace

Config Config::defaults() {
    Config c;
    c.j = default_tree();
    return c;
}

Config Config::from_json(const json& in) {
    Config c;
    c.j = json::object();
    validate_and_fill(c.j, in, default_tree(), "");
    return c;
}

Config Config::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    json in;
    try {
        f >> in;
    } catch (const std::exception& e) {
        throw std::runtime_error("config: parse error in " + path + ": " + e.what());
    }
    return from_json(in);
}

void Config::set_override(const std::string& dotted, const std::string& value) {
    static const json defaults = default_tree();
    const json* dv = walk(defaults, dotted);
    if (!dv || dv->is_object()) throw std::runtime_error("config: unknown key '" + dotted + "'");
    json* cur = &j;
    std::stringstream ss(dotted);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (size_t i = 0; i + 1 < parts.size(); ++i) cur = &(*cur)[parts[i]];
    json v;
    if (dv->is_boolean())
        v = (value == "true" || value == "1");
    else if (dv->is_number_integer())
        v = std::stoll(value);
    else if (dv->is_number())
        v = std::stod(value);
    else
        v = value;
    (*cur)[parts.back()] = v;
}

double Config::num(const std::string& dotted) const {
    const json* v = walk(j, dotted);
    if (!v) throw std::runtime_error("config: missing key '" + dotted + "'");
    return v->get<double>();
}

int64_t Config::integer(const std::string& dotted) const {
    const json* v = walk(j, dotted);
    if (!v) throw std::runtime_error("config: missing key '" + dotted + "'");
    return v->get<int64_t>();
}

bool Config::flag(const std::string& dotted) const {
    const json* v = walk(j, dotted);
    if (!v) throw std::runtime_error("config: missing key '" + dotted + "'");
    return v->get<bool>();
}

std::string Config::str(const std::string& dotted) const {
    const json* v = walk(j, dotted);
    if (!v) throw std::runtime_error("config: missing key '" + dotted + "'");
    return v->get<std::string>();
}

uint64_t Config::hash() const {
    std::string canonical = j.dump();
    return hash_str(canonical.c_str());
}

}  // namespace psinger
