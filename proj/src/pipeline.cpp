#include "psinger/pipeline.hpp"

#include <cmath>
#include <sstream>

#include "psinger/pinyin.hpp"

namespace psinger::pipeline {

using ad::Var;

AlignedInput align_lyrics_pitches(const std::string& lyrics, const std::vector<int>& note_midi) {
    std::istringstream iss(lyrics);
    std::vector<std::string> tokens;
    std::string tok;
    while (iss >> tok) tokens.push_back(tok);
    if (tokens.size() != note_midi.size())
        throw std::runtime_error("infer: " + std::to_string(tokens.size()) +
                                 " lyric syllables but " + std::to_string(note_midi.size()) +
                                 " pitch values");
    AlignedInput out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (auto special = PhonemeInventory::try_id_of(tokens[i]);
            special && PhonemeInventory::is_special(*special)) {
            out.phonemes.push_back(*special);
            out.pitches.push_back(kRestPitch);
            continue;
        }
        auto [initial, fin] = pinyin_to_phonemes(tokens[i]);
        int midi = note_midi[i];
        if (midi < kPitchMin || midi > kPitchMax)
            throw std::runtime_error("infer: pitch " + std::to_string(midi) + " for '" +
                                     tokens[i] + "' outside MIDI [" + std::to_string(kPitchMin) +
                                     ", " + std::to_string(kPitchMax) + "]");
        if (initial) {
            out.phonemes.push_back(PhonemeInventory::id_of(*initial));
            out.pitches.push_back(midi);
        }
        out.phonemes.push_back(PhonemeInventory::id_of(fin));
        out.pitches.push_back(midi);
    }
    return out;
}

size_t video_frame_budget(size_t video_frames, const Config& cfg) {
    double mel_per_video = cfg.num("audio.sample_rate") /
                           (cfg.num("audio.hop") * cfg.num("audio.fps"));
    return size_t(std::llround(double(video_frames) * mel_per_video));
}

SynthesisResult synthesize(nn::ParamStore& ps, const Config& cfg,
                           const diffusion::PitchStats& stats, const SynthesisInputs& in,
                           bool use_vcfm, uint64_t seed, bool sync_scale,
                           const std::vector<int>* force_durations) {
    if (in.phonemes.empty()) throw std::runtime_error("infer: empty phoneme sequence");
    if (sync_scale && in.lips.numel() == 0)
        throw std::runtime_error("infer: --sync-scale needs lip frames");

    nn::Ctx c(ps, false, 0);
    Var cf = model::combine_content(model::encode_phonemes(c, cfg, in.phonemes),
                                    model::encode_pitch(c, cfg, in.pitches));
    if (use_vcfm) {
        if (in.lips.numel() == 0) throw std::runtime_error("infer: lip frames are required");
        cf = model::vcfm_forward(c, cfg, cf, model::encode_video(c, cfg, in.lips));
    }

    SynthesisResult out;
    Tensor log_d = model::predict_log_durations(c, cfg, cf)->value;
    if (force_durations) {
        if (force_durations->size() != in.phonemes.size())
            throw std::runtime_error("infer: forced duration count mismatch");
        out.durations = *force_durations;
    } else if (sync_scale) {
        std::vector<double> weights(log_d.numel());
        for (size_t i = 0; i < weights.size(); ++i) weights[i] = std::exp(log_d.data[i]);
        out.durations = snap_durations(weights, video_frame_budget(in.lips.dim(0), cfg));
    } else {
        out.durations = model::durations_from_log(log_d);
    }

    size_t frames = 0;
    for (int d : out.durations) frames += size_t(d);
    Var sf = model::encode_speaker(c, cfg, in.ref_mel);
    Var ff = ad::add(model::length_regulate(cf, out.durations), ad::tile_rows(sf, frames));

    out.f0 = diffusion::pitch_diffusion_sample(c, cfg, ff, stats, Rng::derive(seed, 0xF0ull));

    auto style = model::style_extract(c, cfg, ad::constant(diffusion::mel_normalize(in.ref_mel)),
                                      ff);
    Var cond = cfg.flag("style.to_decoder") ? ad::add(ff, style.style_seq) : ff;
    out.mel = diffusion::decode_mel(c, cfg, cond, sf, Rng::derive(seed, 0xDECull));
    return out;
}

LoadedModel load_model(const std::string& checkpoint_dir) {
    LoadedModel m;
    {
        // peek at the metadata first: registration depends on the stage
        nn::ParamStore probe;  // empty store reads only meta.json
        std::string meta = probe.load(checkpoint_dir);
        m.cfg = training::config_from_meta(meta);
        m.stats = training::stats_from_meta(meta);
        m.stage = int(nlohmann::json::parse(meta).at("stage").get<int64_t>());
    }
    m.use_vcfm = m.stage != 1 && m.cfg.flag("vcfm.enabled");
    training::register_params(m.ps, m.cfg, m.use_vcfm);
    m.ps.load(checkpoint_dir);
    return m;
}

}  // namespace psinger::pipeline
