#include "psinger/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace psinger::training {

using ad::Var;
using nlohmann::json;
using nn::Ctx;

Var composite_loss(const Config& cfg, const Var& l_r, const Var& l_d, const Var& l_p,
                   const Var& l_c) {
    struct Term {
        const char* name;
        const Var& v;
        double w;
    };
    const Term terms[] = {{"L_R", l_r, cfg.num("loss.lambda_r")},
                          {"L_D", l_d, cfg.num("loss.lambda_d")},
                          {"L_P", l_p, cfg.num("loss.lambda_p")},
                          {"L_C", l_c, cfg.num("loss.lambda_c")}};
    Var total;
    for (const Term& t : terms) {
        if (t.v->value.numel() != 1)
            throw std::runtime_error(std::string("composite_loss: ") + t.name + " is not scalar");
        if (!std::isfinite(t.v->value.data[0]))
            throw std::runtime_error(std::string("composite_loss: ") + t.name + " is not finite");
        Var scaled = ad::scale(t.v, t.w);
        total = total ? ad::add(total, scaled) : scaled;
    }
    return total;
}

double lr_at(size_t step, double base_lr, size_t warmup) {
    if (step == 0) return 0.0;
    if (warmup == 0) return base_lr / std::sqrt(double(step));
    if (step <= warmup) return base_lr * double(step) / double(warmup);
    return base_lr * std::sqrt(double(warmup) / double(step));
}

void adam_step(nn::ParamStore& ps, const std::map<std::string, Tensor>& grads, size_t step,
               double base_lr, size_t warmup, double clip_norm,
               const std::map<std::string, double>& lr_scale) {
    constexpr double b1 = 0.9, b2 = 0.98, eps = 1e-9;
    double norm2 = 0.0;
    for (const auto& [name, g] : grads) {
        nn::Param* p = ps.find(name);
        if (!p || !p->trainable) continue;
        for (double v : g.data) norm2 += v * v;
    }
    double gscale = 1.0;
    if (clip_norm > 0.0 && norm2 > clip_norm * clip_norm) gscale = clip_norm / std::sqrt(norm2);

    double lr = lr_at(step, base_lr, warmup);
    double bc1 = 1.0 - std::pow(b1, double(step));
    double bc2 = 1.0 - std::pow(b2, double(step));
    for (const auto& [name, g] : grads) {
        nn::Param* p = ps.find(name);
        if (!p || !p->trainable) continue;
        if (g.shape != p->value.shape)
            throw ShapeError("adam_step: gradient shape mismatch for " + name);
        double scale = 1.0;
        size_t best_len = 0;
        for (const auto& [prefix, s] : lr_scale)
            if (name.rfind(prefix, 0) == 0 && prefix.size() + 1 > best_len) {
                best_len = prefix.size() + 1;
                scale = s;
            }
        size_t skip = p->pad_row0 && p->value.rank() >= 2 ? p->value.numel() / p->value.dim(0)
                                                          : 0;
        for (size_t i = 0; i < g.numel(); ++i) {
            if (i < skip) continue;  // pinned padding row
            double gi = g.data[i] * gscale;
            p->m.data[i] = b1 * p->m.data[i] + (1.0 - b1) * gi;
            p->v.data[i] = b2 * p->v.data[i] + (1.0 - b2) * gi * gi;
            double mhat = p->m.data[i] / bc1, vhat = p->v.data[i] / bc2;
            p->value.data[i] -= lr * scale * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

UttData load_utt(const UtteranceRecord& rec, const std::string& base_dir) {
    namespace fs = std::filesystem;
    auto resolve = [&](const std::string& p) {
        fs::path fp(p);
        if (fp.is_relative() && !base_dir.empty()) fp = fs::path(base_dir) / fp;
        return fp.string();
    };
    UttData u;
    u.rec = rec;
    try {
        u.mel = load_tnsr(resolve(rec.mel_path));
        u.f0 = load_tnsr(resolve(rec.f0_path));
        u.lips = load_tnsr(resolve(rec.lip_path));
        u.ref_mel = load_tnsr(resolve(rec.ref_mel_path));
    } catch (const std::exception& e) {
        throw std::runtime_error("utterance '" + rec.id + "': " + e.what());
    }
    long total = std::accumulate(rec.gt_durations.begin(), rec.gt_durations.end(), 0L);
    if (long(u.mel.rows()) != total)
        throw std::runtime_error("utterance '" + rec.id + "': durations sum to " +
                                 std::to_string(total) + " but mel has " +
                                 std::to_string(u.mel.rows()) + " frames");
    u.mel_norm = diffusion::mel_normalize(u.mel);
    return u;
}

diffusion::PitchStats corpus_pitch_stats(const std::vector<UttData>& data) {
    double acc = 0, acc2 = 0;
    size_t n = 0;
    for (const UttData& u : data) {
        size_t frames = u.f0.cols();
        std::vector<double> hz(frames);
        std::vector<uint8_t> voiced(frames);
        for (size_t i = 0; i < frames; ++i) {
            hz[i] = u.f0.at2(0, i);
            voiced[i] = u.f0.at2(1, i) != 0.0;
        }
        for (double v : diffusion::interp_log_f0(hz, voiced)) {
            acc += v;
            acc2 += v * v;
            ++n;
        }
    }
    diffusion::PitchStats s;
    if (n == 0) return s;
    s.mean = acc / double(n);
    s.stddev = std::sqrt(std::max(acc2 / double(n) - s.mean * s.mean, 0.0));
    if (s.stddev < 1e-6) s.stddev = 1e-6;
    return s;
}

ForwardLosses forward_losses(Ctx& c, const Config& cfg, const UttData& u,
                             const diffusion::PitchStats& stats, bool use_vcfm,
                             uint64_t draw_seed, const Tensor* vf_cache) {
    Rng draw(draw_seed);
    size_t frames = u.mel.rows();

    Var tf = model::encode_phonemes(c, cfg, u.rec.phonemes);
    Var pf = model::encode_pitch(c, cfg, u.rec.pitches);
    Var cf = model::combine_content(tf, pf);
    if (use_vcfm) {
        Var vf = vf_cache ? ad::constant(*vf_cache) : model::encode_video(c, cfg, u.lips);
        cf = model::vcfm_forward(c, cfg, cf, vf);
    }

    // duration loss in the log domain
    Tensor logd_gt({u.rec.gt_durations.size(), 1});
    for (size_t i = 0; i < u.rec.gt_durations.size(); ++i)
        logd_gt.data[i] = std::log(double(u.rec.gt_durations[i]));
    Var l_d = ad::mse(model::predict_log_durations(c, cfg, cf), ad::constant(logd_gt));

    // teacher-forced frame features
    Var sf = model::encode_speaker(c, cfg, u.ref_mel);
    Var ff = ad::add(model::length_regulate(cf, u.rec.gt_durations), ad::tile_rows(sf, frames));

    auto style = model::style_extract(c, cfg, ad::constant(diffusion::mel_normalize(u.ref_mel)),
                                      ff);
    Var cond = cfg.flag("style.to_decoder") ? ad::add(ff, style.style_seq) : ff;

    // pitch diffusion targets: standardized interpolated log-F0 + UV flags
    std::vector<double> hz(frames);
    std::vector<uint8_t> voiced(frames);
    Tensor uv({frames, 1});
    for (size_t i = 0; i < frames; ++i) {
        hz[i] = u.f0.at2(0, i);
        voiced[i] = u.f0.at2(1, i) != 0.0;
        uv.data[i] = voiced[i] ? 1.0 : 0.0;
    }
    Tensor f0_std({frames, 1});
    {
        auto logf0 = diffusion::interp_log_f0(hz, voiced);
        for (size_t i = 0; i < frames; ++i)
            f0_std.data[i] = (logf0[i] - stats.mean) / stats.stddev;
    }
    size_t t_p = size_t(draw.uniform_int(1, int(cfg.integer("pitch.steps"))));
    Tensor noise_p({frames, 1});
    for (auto& v : noise_p.data) v = draw.normal();
    auto pl = diffusion::pitch_diffusion_train(c, cfg, ff, f0_std, uv, t_p, noise_p);

    // mel reconstruction; half the draws concentrate on the low-t band
    // [2, 1 + T/4] where ancestral sampling commits its final error (the very
    // last step is a near-copy, so t = 1 needs no extra mass), the other half
    // keep the uniform coverage
    size_t steps_m = size_t(cfg.integer("diffusion.steps"));
    size_t draws_m = size_t(cfg.integer("training.mel_draws"));
    size_t band_m = std::max<size_t>(1, steps_m / 4);
    Var l_r;
    for (size_t d = 0; d < draws_m; ++d) {
        double u_m = draw.uniform();
        size_t t_m = draw.uniform() < 0.5
                         ? std::min(steps_m, size_t(1 + u_m * double(steps_m)))
                         : std::min(steps_m, size_t(2 + u_m * double(band_m)));
        Tensor noise_m({frames, 80});
        for (auto& v : noise_m.data) v = draw.normal();
        Var li = diffusion::denoise_train_step(c, cfg, u.mel_norm, cond, sf, t_m, noise_m);
        l_r = l_r ? ad::add(l_r, li) : li;
    }
    if (draws_m > 1) l_r = ad::scale(l_r, 1.0 / double(draws_m));

    return {l_r, l_d, ad::add(pl.noise_mse, pl.uv_bce), style.commit_loss};
}

void register_params(nn::ParamStore& ps, const Config& cfg, bool with_visual) {
    size_t side = size_t(cfg.integer("audio.lip_size"));
    UttData u;
    u.rec.id = "probe";
    u.rec.phonemes = {1, 2};
    u.rec.pitches = {50, kRestPitch};
    u.rec.gt_durations = {6, 6};
    u.mel = Tensor::full({12, 80}, std::log(1e-5));
    u.mel_norm = diffusion::mel_normalize(u.mel);
    u.f0 = Tensor::zeros({2, 12});
    u.lips = Tensor::zeros({2, side, side});
    u.ref_mel = Tensor::full({12, 80}, std::log(1e-5));
    Ctx c(ps, false, 0);
    (void)forward_losses(c, cfg, u, {}, with_visual, 0);
}

std::string make_meta(const Config& cfg, int stage, size_t step,
                      const diffusion::PitchStats& stats) {
    json meta;
    meta["config"] = cfg.j;
    meta["config_hash"] = cfg.hash();
    meta["stage"] = stage;
    meta["step"] = step;
    meta["pitch_mean"] = stats.mean;
    meta["pitch_std"] = stats.stddev;
    return meta.dump(2);
}

diffusion::PitchStats stats_from_meta(const std::string& meta_json) {
    json meta = json::parse(meta_json);
    diffusion::PitchStats s;
    s.mean = meta.at("pitch_mean").get<double>();
    s.stddev = meta.at("pitch_std").get<double>();
    return s;
}

Config config_from_meta(const std::string& meta_json) {
    json meta = json::parse(meta_json);
    return Config::from_json(meta.at("config"));
}

TrainResult train(const Config& cfg, const std::vector<UtteranceRecord>& records,
                  const std::string& data_dir, const TrainOptions& opt) {
    namespace fs = std::filesystem;
    if (records.empty()) throw std::runtime_error("train: empty manifest");
    if (opt.stage == 2 && opt.init_from.empty())
        throw std::runtime_error("train: stage 2 requires --init-from");

    std::vector<UttData> data;
    data.reserve(records.size());
    for (const auto& r : records) data.push_back(load_utt(r, data_dir));

    nn::ParamStore ps;
    diffusion::PitchStats stats;
    bool use_vcfm = opt.stage != 1 && cfg.flag("vcfm.enabled");
    if (opt.stage == 2) {
        // bring up the stage-1 parameter set first so the checkpoint maps
        // one-to-one, then let the fusion/visual params initialize fresh
        register_params(ps, cfg, false);
        std::string meta = ps.load(opt.init_from);
        stats = stats_from_meta(meta);
        register_params(ps, cfg, true);
        ps.set_trainable("visual.", false);
        if (cfg.flag("training.stage2_freeze_stage1")) {
            for (auto& [name, p] : ps.all())
                if (name.rfind("vcfm.", 0) != 0) p.trainable = false;
        }
    } else {
        register_params(ps, cfg, use_vcfm);
        stats = corpus_pitch_stats(data);
    }

    // frozen visual encoder: its per-utterance output is a constant, cache it
    std::vector<Tensor> vf_cache(data.size());
    bool visual_frozen = opt.stage == 2;
    if (use_vcfm && visual_frozen) {
        for (size_t i = 0; i < data.size(); ++i) {
            Ctx c(ps, false, 0);
            vf_cache[i] = model::encode_video(c, cfg, data[i].lips)->value;
        }
    }

    size_t steps = opt.steps;
    if (steps == 0)
        steps = size_t(cfg.integer(opt.stage == 2 ? "training.stage2_steps"
                                                  : "training.stage1_steps"));
    size_t batch = std::min<size_t>(size_t(cfg.integer("training.batch_size")), data.size());
    double base_lr = cfg.num("training.lr");
    size_t warmup = size_t(cfg.integer("training.warmup"));
    double clip = cfg.num("training.clip_norm");
    double ft_scale = cfg.num("training.stage2_ft_scale");
    std::map<std::string, double> lr_scale;
    if (opt.stage == 2) lr_scale = {{"", ft_scale}, {"vcfm.", 1.0}};

    // optional exponential moving average of the weights; checkpoints store
    // the averaged weights, which smooths out late-training parameter noise
    double ema_decay = cfg.num("training.ema");
    std::map<std::string, Tensor> ema_w;
    if (ema_decay > 0.0)
        for (const auto& [name, p] : ps.all())
            if (p.trainable) ema_w.emplace(name, p.value);
    auto save_ck = [&](const std::string& dir, const std::string& meta) {
        if (ema_w.empty()) {
            ps.save(dir, meta);
            return;
        }
        std::map<std::string, Tensor> live;
        for (auto& [name, w] : ema_w) {
            live.emplace(name, ps.find(name)->value);
            ps.find(name)->value = w;
        }
        ps.save(dir, meta);
        for (auto& [name, w] : live) ps.find(name)->value = w;
    };

    fs::create_directories(opt.out_dir);
    std::ofstream log(opt.out_dir + "/train_log.jsonl");
    size_t log_every = size_t(cfg.integer("training.log_every"));
    size_t ck_every = size_t(cfg.integer("training.checkpoint_every"));

    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    size_t epoch_of = ~size_t(0);

    TrainResult result;
    for (size_t step = 1; step <= steps; ++step) {
        size_t epoch = (step - 1) * batch / data.size();
        if (epoch != epoch_of) {
            epoch_of = epoch;
            Rng shuf(Rng::derive(opt.seed, 0xE90C + epoch));
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[size_t(shuf.uniform_int(0, int(i) - 1))]);
        }

        std::map<std::string, Tensor> grads;
        LossParts parts;
        for (size_t b = 0; b < batch; ++b) {
            size_t idx = order[((step - 1) * batch + b) % data.size()];
            Ctx c(ps, true, Rng::derive(opt.seed, step * 1315423911ull + b));
            ForwardLosses fl =
                forward_losses(c, cfg, data[idx], stats, use_vcfm,
                               Rng::derive(opt.seed, step * 2654435761ull + b),
                               use_vcfm && visual_frozen ? &vf_cache[idx] : nullptr);
            Var total = composite_loss(cfg, fl.l_r, fl.l_d, fl.l_p, fl.l_c);
            const double vals[4] = {fl.l_r->value.data[0], fl.l_d->value.data[0],
                                    fl.l_p->value.data[0], fl.l_c->value.data[0]};
            for (double v : vals)
                if (v < -1e-12)
                    throw std::runtime_error("train: negative loss part on '" +
                                             data[idx].rec.id + "'");
            parts.l_r += vals[0] / double(batch);
            parts.l_d += vals[1] / double(batch);
            parts.l_p += vals[2] / double(batch);
            parts.l_c += vals[3] / double(batch);
            parts.total += total->value.data[0] / double(batch);

            ad::backward(ad::scale(total, 1.0 / double(batch)));
            for (const auto& [name, var] : c.vars) {
                if (var->grad.numel() == 0) continue;
                auto it = grads.find(name);
                if (it == grads.end())
                    grads.emplace(name, var->grad);
                else
                    for (size_t i = 0; i < var->grad.numel(); ++i)
                        it->second.data[i] += var->grad.data[i];
            }
        }

        adam_step(ps, grads, step, base_lr, warmup, clip, lr_scale);
        // cap the decay early on so the average forgets its initialization
        double d_t = std::min(ema_decay, double(step) / double(step + 10));
        for (auto& [name, w] : ema_w) {
            const Tensor& v = ps.find(name)->value;
            for (size_t i = 0; i < w.numel(); ++i)
                w.data[i] = d_t * w.data[i] + (1.0 - d_t) * v.data[i];
        }

        if (step == 1 || step == steps || step % log_every == 0) {
            nlohmann::json line = {{"step", step},          {"stage", opt.stage},
                                   {"L_R", parts.l_r},      {"L_D", parts.l_d},
                                   {"L_P", parts.l_p},      {"L_C", parts.l_c},
                                   {"total", parts.total},  {"lr", lr_at(step, base_lr, warmup)}};
            log << line.dump() << "\n";
            log.flush();
        }
        if (ck_every > 0 && step % ck_every == 0 && step != steps)
            save_ck(opt.out_dir + "/ck_" + std::to_string(step),
                    make_meta(cfg, opt.stage, step, stats));
        result.final_loss = parts;
    }
    result.checkpoint_dir = opt.out_dir + "/ck_final";
    save_ck(result.checkpoint_dir, make_meta(cfg, opt.stage, steps, stats));
    result.steps_run = steps;
    return result;
}

}  // namespace psinger::training
