#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "psinger/metrics.hpp"
#include "psinger/pinyin.hpp"
#include "psinger/pipeline.hpp"
#include "psinger/synthetic.hpp"
#include "psinger/textgrid.hpp"
#include "psinger/training.hpp"

namespace fs = std::filesystem;
using namespace psinger;

namespace {

// exit codes: 0 ok, 1 usage, 2 data validation, 3 runtime
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// flatten the default config into "key = default" lines for --help
void collect_keys(const nlohmann::json& j, const std::string& prefix,
                  std::vector<std::string>& out) {
    for (const auto& [k, v] : j.items()) {
        std::string key = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object())
            collect_keys(v, key, out);
        else
            out.push_back("  " + key + " = " + v.dump());
    }
}

std::string config_key_help() {
    std::vector<std::string> lines;
    collect_keys(nlohmann::json::parse(Config::defaults().dump()), "", lines);
    std::string s = "Config keys (for --config files and --set overrides), with defaults:\n";
    for (const auto& l : lines) s += l + "\n";
    return s;
}

Config build_config(const std::string& config_path, const std::vector<std::string>& sets) {
    Config cfg = config_path.empty() ? Config::defaults() : Config::from_file(config_path);
    for (const std::string& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
        cfg.set_override(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

AudioConfig audio_of(const Config& cfg) {
    AudioConfig a;
    a.sample_rate = int(cfg.integer("audio.sample_rate"));
    a.fft = int(cfg.integer("audio.fft"));
    a.hop = int(cfg.integer("audio.hop"));
    a.mel_bins = int(cfg.integer("audio.mel_bins"));
    return a;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open " + p.string());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void print_inventory_stats(const std::vector<UtteranceRecord>& recs) {
    std::set<int> seen;
    size_t phones = 0, frames = 0;
    for (const auto& r : recs) {
        for (int id : r.phonemes) seen.insert(id);
        phones += r.phonemes.size();
        for (int d : r.gt_durations) frames += size_t(d);
    }
    size_t initials = 0, finals = 0;
    for (int id : seen) {
        if (PhonemeInventory::is_special(id)) continue;
        if (PhonemeInventory::is_initial_id(id))
            ++initials;
        else
            ++finals;
    }
    std::cout << "utterances: " << recs.size() << "\n"
              << "phoneme tokens: " << phones << ", mel frames: " << frames << "\n"
              << "inventory coverage: " << initials << "/"
              << PhonemeInventory::initials().size() << " initials, " << finals << "/"
              << PhonemeInventory::finals().size() << " finals\n";
}

// ---- data-prep: real-data path ----

UtteranceRecord prep_real_utterance(const std::string& id, const fs::path& wav,
                                    const fs::path& tg_dir, const fs::path& lip_dir,
                                    const fs::path& lyrics_dir, const fs::path& out,
                                    const AudioConfig& acfg) {
    std::vector<double> samples = read_wav(wav.string(), acfg.sample_rate);
    Tensor mel = extract_mel(samples, acfg);
    if (mel.rows() == 0) throw DataError("utterance '" + id + "': audio shorter than one frame");
    F0Contour f0 = extract_f0(samples, acfg);

    fs::path tg_path = tg_dir / (id + ".TextGrid");
    TextGrid tg = parse_textgrid(read_file(tg_path));
    const TgTier* phones = tg.tier("phones");
    if (!phones) phones = tg.tier("phone");
    if (!phones) throw DataError("utterance '" + id + "': no 'phones' tier in " + tg_path.string());

    UtteranceRecord rec;
    rec.id = id;
    std::vector<double> weights;
    for (const TgInterval& iv : phones->intervals) {
        std::string label = iv.label.empty() ? "SIL" : iv.label;
        auto pid = PhonemeInventory::try_id_of(label);
        if (!pid)
            throw DataError("utterance '" + id + "': unknown phone label '" + label + "' in " +
                            tg_path.string());
        rec.phonemes.push_back(*pid);
        weights.push_back(std::max(iv.xmax - iv.xmin, 1e-9));
    }
    rec.gt_durations = snap_durations(weights, mel.rows());

    if (!lyrics_dir.empty()) {
        std::vector<int> lyric_ids = lyrics_to_phoneme_ids(read_file(lyrics_dir / (id + ".txt")));
        std::vector<int> sung;
        for (int p : rec.phonemes)
            if (!PhonemeInventory::is_special(p)) sung.push_back(p);
        std::vector<int> expect;
        for (int p : lyric_ids)
            if (!PhonemeInventory::is_special(p)) expect.push_back(p);
        if (sung != expect)
            throw DataError("utterance '" + id + "': TextGrid phone tier does not match lyrics");
    }

    // per-phoneme note from the median voiced F0 inside the phone's frames
    size_t frame = 0;
    for (size_t i = 0; i < rec.phonemes.size(); ++i) {
        size_t n = size_t(rec.gt_durations[i]);
        if (PhonemeInventory::is_special(rec.phonemes[i])) {
            rec.pitches.push_back(kRestPitch);
        } else {
            std::vector<double> voiced_hz;
            for (size_t f = frame; f < frame + n && f < f0.f0_hz.size(); ++f)
                if (f0.voiced[f]) voiced_hz.push_back(f0.f0_hz[f]);
            int midi = 57;
            if (!voiced_hz.empty()) {
                std::nth_element(voiced_hz.begin(), voiced_hz.begin() + long(voiced_hz.size() / 2),
                                 voiced_hz.end());
                midi = int(std::lround(hz_to_midi(voiced_hz[voiced_hz.size() / 2])));
            }
            rec.pitches.push_back(std::clamp(midi, kPitchMin, kPitchMax));
        }
        frame += n;
    }

    fs::path lip_path = lip_dir / (id + ".tnsr");
    if (!fs::exists(lip_path))
        throw DataError("utterance '" + id + "': missing lip frames " + lip_path.string());

    save_tnsr((out / (id + "_mel.tnsr")).string(), mel);
    Tensor f0t({2, f0.f0_hz.size()});
    for (size_t i = 0; i < f0.f0_hz.size(); ++i) {
        f0t.at2(0, i) = f0.f0_hz[i];
        f0t.at2(1, i) = f0.voiced[i] ? 1.0 : 0.0;
    }
    save_tnsr((out / (id + "_f0.tnsr")).string(), f0t);
    fs::copy_file(lip_path, out / (id + "_lips.tnsr"), fs::copy_options::overwrite_existing);

    rec.mel_path = id + "_mel.tnsr";
    rec.f0_path = id + "_f0.tnsr";
    rec.lip_path = id + "_lips.tnsr";
    rec.ref_mel_path = id + "_mel.tnsr";  // self-reference timbre clip
    return rec;
}

// ---- subcommands ----

int cmd_data_prep(const Config& cfg, bool synthetic, uint64_t seed, size_t utterances,
                  size_t speakers, const std::string& wav_dir, const std::string& tg_dir,
                  const std::string& lip_dir, const std::string& lyrics_dir,
                  const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<UtteranceRecord> recs;
    if (synthetic) {
        recs = gen_synthetic_corpus(seed, utterances, speakers, out_dir, audio_of(cfg));
    } else {
        if (wav_dir.empty() || tg_dir.empty() || lip_dir.empty())
            throw CLI::ValidationError(
                "data-prep", "need --synthetic or all of --wav-dir/--textgrid-dir/--lip-dir");
        for (const auto& entry : fs::directory_iterator(wav_dir)) {
            if (entry.path().extension() != ".wav") continue;
            recs.push_back(prep_real_utterance(entry.path().stem().string(), entry.path(), tg_dir,
                                               lip_dir, lyrics_dir, out_dir, audio_of(cfg)));
        }
        std::sort(recs.begin(), recs.end(),
                  [](const auto& a, const auto& b) { return a.id < b.id; });
        if (recs.empty()) throw DataError("no .wav files in " + wav_dir);
    }
    for (const auto& r : recs) {
        try {
            validate_record_files(r, out_dir);
        } catch (const std::exception& e) {
            throw DataError("utterance '" + r.id + "': " + e.what());
        }
    }
    write_manifest(out_dir + "/manifest.jsonl", recs);
    print_inventory_stats(recs);
    std::cout << "wrote " << out_dir << "/manifest.jsonl (config hash " << cfg.hash() << ")\n";
    return 0;
}

int cmd_train(const Config& cfg, const std::string& manifest, const std::string& data_dir,
              const std::string& stage_str, const std::string& init_from,
              const std::string& out_dir, size_t steps, uint64_t seed) {
    training::TrainOptions opt;
    if (stage_str == "1")
        opt.stage = 1;
    else if (stage_str == "2")
        opt.stage = 2;
    else if (stage_str == "single")
        opt.stage = 0;
    else
        throw CLI::ValidationError("--stage", "must be 1, 2, or single");
    opt.init_from = init_from;
    opt.out_dir = out_dir;
    opt.steps = steps;
    opt.seed = seed;
    auto recs = read_manifest(manifest);
    auto res = training::train(cfg, recs, data_dir, opt);
    std::cout << "trained " << res.steps_run << " steps; final total loss "
              << res.final_loss.total << "\ncheckpoint: " << res.checkpoint_dir << "\n";
    return 0;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

int cmd_infer(const std::string& checkpoint, const std::string& lyrics,
              const std::string& pitches_csv, const std::string& lips_path,
              const std::string& ref_mel_path, const std::string& out_dir, uint64_t seed,
              bool sync_scale, bool emit_wav, const std::vector<std::string>& sets) {
    pipeline::LoadedModel m = pipeline::load_model(checkpoint);
    for (const std::string& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value");
        m.cfg.set_override(kv.substr(0, eq), kv.substr(eq + 1));
    }

    pipeline::AlignedInput aligned = pipeline::align_lyrics_pitches(lyrics,
                                                                    parse_int_list(pitches_csv));
    pipeline::SynthesisInputs in;
    in.phonemes = aligned.phonemes;
    in.pitches = aligned.pitches;
    in.lips = load_tnsr(lips_path);
    in.ref_mel = load_tnsr(ref_mel_path);

    auto res = pipeline::synthesize(m.ps, m.cfg, m.stats, in, m.use_vcfm, seed, sync_scale);

    fs::create_directories(out_dir);
    save_tnsr(out_dir + "/mel.tnsr", res.mel);
    Tensor f0t({2, res.f0.f0_hz.size()});
    for (size_t i = 0; i < res.f0.f0_hz.size(); ++i) {
        f0t.at2(0, i) = res.f0.f0_hz[i];
        f0t.at2(1, i) = res.f0.voiced[i] ? 1.0 : 0.0;
    }
    save_tnsr(out_dir + "/f0.tnsr", f0t);
    nlohmann::json art = {{"config_hash", m.cfg.hash()},
                          {"seed", seed},
                          {"stage", m.stage},
                          {"durations", res.durations},
                          {"frames", res.mel.rows()},
                          {"sync_scale", sync_scale}};
    std::ofstream(out_dir + "/artifacts.json") << art.dump(2) << "\n";
    if (emit_wav)
        write_wav(out_dir + "/audio.wav", griffin_lim(res.mel, audio_of(m.cfg)),
                  int(m.cfg.integer("audio.sample_rate")));
    std::cout << "wrote " << res.mel.rows() << "x80 mel to " << out_dir << "\n";
    return 0;
}

std::vector<double> speaker_embedding(pipeline::LoadedModel& m, const Tensor& mel) {
    nn::Ctx c(m.ps, false, 0);
    Tensor e = model::encode_speaker(c, m.cfg, mel)->value;
    return e.data;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& data_dir, const std::string& gen_dir, bool synthesize_first,
             uint64_t seed, const std::string& out_path) {
    pipeline::LoadedModel m = pipeline::load_model(checkpoint);
    auto recs = read_manifest(manifest);
    std::vector<metrics::UttEval> evals;
    for (const auto& rec : recs) {
        training::UttData u = training::load_utt(rec, data_dir);
        Tensor gen_mel;
        F0Contour gen_f0;
        if (synthesize_first) {
            pipeline::SynthesisInputs in;
            in.phonemes = rec.phonemes;
            in.pitches = rec.pitches;
            in.lips = u.lips;
            in.ref_mel = u.ref_mel;
            // ground-truth durations so FFE compares frame-for-frame
            auto res = pipeline::synthesize(m.ps, m.cfg, m.stats, in, m.use_vcfm,
                                            Rng::derive(seed, hash_str(rec.id.c_str())), false,
                                            &rec.gt_durations);
            gen_mel = res.mel;
            gen_f0 = res.f0;
            if (!gen_dir.empty()) {
                fs::create_directories(gen_dir);
                save_tnsr(gen_dir + "/" + rec.id + "_mel.tnsr", gen_mel);
            }
        } else {
            fs::path mel_p = fs::path(gen_dir) / (rec.id + "_mel.tnsr");
            fs::path f0_p = fs::path(gen_dir) / (rec.id + "_f0.tnsr");
            if (!fs::exists(mel_p) || !fs::exists(f0_p))
                throw DataError("unpaired utterance '" + rec.id + "': missing generated " +
                                mel_p.string() + " or " + f0_p.string());
            gen_mel = load_tnsr(mel_p.string());
            Tensor f0t = load_tnsr(f0_p.string());
            for (size_t i = 0; i < f0t.cols(); ++i) {
                gen_f0.f0_hz.push_back(f0t.at2(0, i));
                gen_f0.voiced.push_back(f0t.at2(1, i) != 0.0);
            }
        }
        F0Contour gt_f0;
        for (size_t i = 0; i < u.f0.cols(); ++i) {
            gt_f0.f0_hz.push_back(u.f0.at2(0, i));
            gt_f0.voiced.push_back(u.f0.at2(1, i) != 0.0);
        }
        if (gen_f0.f0_hz.size() != gt_f0.f0_hz.size())
            throw DataError("utterance '" + rec.id + "': generated F0 has " +
                            std::to_string(gen_f0.f0_hz.size()) + " frames, ground truth " +
                            std::to_string(gt_f0.f0_hz.size()));
        metrics::UttEval e;
        e.id = rec.id;
        e.mcd_db = metrics::mcd(gen_mel, u.mel);
        e.ffe = metrics::ffe(gen_f0, gt_f0);
        e.cos = metrics::cos_sim(speaker_embedding(m, gen_mel), speaker_embedding(m, u.mel));
        evals.push_back(e);
    }
    auto report = metrics::EvalReport::from_utts(std::move(evals));
    std::cout << report.to_table();
    if (!out_path.empty()) {
        std::ofstream(out_path) << report.to_json(m.cfg.dump()) << "\n";
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef _OPENMP
    if (const char* threads = std::getenv("PERFORMSINGER_THREADS"))
        omp_set_num_threads(std::max(1, std::atoi(threads)));
#endif
    CLI::App app{"PerformSinger-style multimodal singing-voice synthesis"};
    app.require_subcommand(1);
    app.footer(config_key_help());
    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "JSON config file (defaults used when omitted)");
    app.add_option("--set", sets, "override a config key, e.g. --set model.hidden=128")
        ->take_all();

    // data-prep
    auto* prep = app.add_subcommand("data-prep", "build a manifest + feature files");
    bool synthetic = false;
    uint64_t seed = 7;
    size_t utterances = 16, speakers = 2;
    std::string wav_dir, tg_dir, lip_dir, lyrics_dir, out_dir = "data_out";
    prep->add_flag("--synthetic", synthetic, "generate the deterministic synthetic corpus");
    prep->add_option("--seed", seed);
    prep->add_option("--utterances", utterances);
    prep->add_option("--speakers", speakers);
    prep->add_option("--wav-dir", wav_dir);
    prep->add_option("--textgrid-dir", tg_dir);
    prep->add_option("--lip-dir", lip_dir);
    prep->add_option("--lyrics-dir", lyrics_dir, "optional pinyin .txt files to cross-check");
    prep->add_option("--out", out_dir);

    // train
    auto* tr = app.add_subcommand("train", "run a training stage");
    std::string manifest, data_dir, stage = "1", init_from, train_out = "run";
    size_t steps = 0;
    uint64_t train_seed = 7;
    tr->add_option("--manifest", manifest)->required();
    tr->add_option("--data-dir", data_dir)->required();
    tr->add_option("--stage", stage, "1, 2, or single");
    tr->add_option("--init-from", init_from, "stage-1 checkpoint (required for stage 2)");
    tr->add_option("--out", train_out);
    tr->add_option("--steps", steps, "0 = stage default from config");
    tr->add_option("--seed", train_seed);

    // infer
    auto* inf = app.add_subcommand("infer", "duration-free synthesis");
    std::string checkpoint, lyrics, pitches, lips_path, ref_mel_path, infer_out = "infer_out";
    uint64_t infer_seed = 7;
    bool sync_scale = false, emit_wav = false;
    inf->add_option("--checkpoint", checkpoint)->required();
    inf->add_option("--lyrics", lyrics, "whitespace-separated pinyin (SIL/BR/SEP allowed)")
        ->required();
    inf->add_option("--pitches", pitches, "comma-separated MIDI notes, one per syllable")
        ->required();
    inf->add_option("--lips", lips_path, "lip-frame .tnsr (m x h x w)")->required();
    inf->add_option("--ref-mel", ref_mel_path, "reference log-mel .tnsr")->required();
    inf->add_option("--out", infer_out);
    inf->add_option("--seed", infer_seed);
    inf->add_flag("--sync-scale", sync_scale,
                  "rescale predicted durations to the video frame budget");
    inf->add_flag("--emit-wav", emit_wav, "also write a Griffin-Lim waveform");
    std::string rejected_durations;
    inf->add_option("--durations", rejected_durations)
        ->check([](const std::string&) {
            return std::string("inference is duration-free; durations cannot be supplied");
        });

    // eval
    auto* ev = app.add_subcommand("eval", "objective metrics against ground truth");
    std::string eval_ck, eval_manifest, eval_data, gen_dir, report_out = "eval_report.json";
    bool synth_first = false;
    uint64_t eval_seed = 7;
    ev->add_option("--checkpoint", eval_ck)->required();
    ev->add_option("--manifest", eval_manifest)->required();
    ev->add_option("--data-dir", eval_data)->required();
    ev->add_option("--gen-dir", gen_dir, "directory of generated <id>_mel/_f0.tnsr artifacts");
    ev->add_flag("--synthesize", synth_first,
                 "generate with ground-truth durations, then evaluate");
    ev->add_option("--seed", eval_seed);
    ev->add_option("--out", report_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        Config cfg = build_config(config_path, sets);
        if (prep->parsed())
            return cmd_data_prep(cfg, synthetic, seed, utterances, speakers, wav_dir, tg_dir,
                                 lip_dir, lyrics_dir, out_dir);
        if (tr->parsed())
            return cmd_train(cfg, manifest, data_dir, stage, init_from, train_out, steps,
                             train_seed);
        if (inf->parsed())
            return cmd_infer(checkpoint, lyrics, pitches, lips_path, ref_mel_path, infer_out,
                             infer_seed, sync_scale, emit_wav, sets);
        if (ev->parsed())
            return cmd_eval(eval_ck, eval_manifest, eval_data, gen_dir, synth_first, eval_seed,
                            report_out);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const ManifestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const TextGridError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const PinyinError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
