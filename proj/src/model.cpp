#include "psinger/model.hpp"

#include <cmath>

#include "psinger/audio.hpp"
#include "psinger/pinyin.hpp"

namespace psinger::model {

using ad::Var;
using nn::Ctx;
using nn::Init;

namespace diag {
std::atomic<long long> vf_prime_evals{0};
}

namespace {

// embedding table whose row 0 is pinned to zeros (padding id)
Var emb_table(Ctx& c, const std::string& name, size_t rows, size_t dim) {
    nn::Param& pm = c.ps.get_or_create(name, {rows, dim}, Init::gauss(0.1));
    if (!pm.pad_row0) {
        pm.pad_row0 = true;
        for (size_t j = 0; j < dim; ++j) pm.value.data[j] = 0.0;
    }
    return c.p(name, {rows, dim}, Init::gauss(0.1));
}

Var conv2d_p(Ctx& c, const std::string& name, const Var& x, size_t cout, size_t k, size_t stride,
             size_t pad) {
    size_t cin = x->value.dim(1);
    Var w = c.p(name + ".w", {cout, cin, k, k}, Init::gauss(1.0 / std::sqrt(double(cin * k * k))));
    Var b = c.p(name + ".b", {cout}, Init::zeros());
    return ad::conv2d(x, w, b, stride, pad);
}

// pre-activation-free basic residual block with projection shortcut when the
// shape changes
Var resblock(Ctx& c, const std::string& name, const Var& x, size_t cout, size_t stride) {
    size_t cin = x->value.dim(1);
    Var h = ad::relu(conv2d_p(c, name + ".c1", x, cout, 3, stride, 1));
    h = conv2d_p(c, name + ".c2", h, cout, 3, 1, 1);
    Var sc = (stride != 1 || cin != cout) ? conv2d_p(c, name + ".sc", x, cout, 1, stride, 0) : x;
    return ad::relu(ad::add(h, sc));
}

// fixed affine map of log-mel into roughly [-1, 1] for network inputs
Tensor norm_mel(const Tensor& mel) {
    Tensor out = mel;
    const double lo = kLogMelMin, hi = kLogMelMax;
    for (auto& v : out.data) v = 2.0 * (v - lo) / (hi - lo) - 1.0;
    return out;
}

}  // namespace

size_t pitch_row(int midi) {
    if (midi == kRestPitch) return 45;
    if (midi < kPitchMin || midi > kPitchMax)
        throw std::runtime_error("pitch out of range [36,79]: " + std::to_string(midi));
    return size_t(midi - kPitchMin) + 1;
}

Var encode_phonemes(Ctx& c, const Config& cfg, const std::vector<int>& ids) {
    if (ids.empty()) throw std::runtime_error("encode_phonemes: empty sequence");
    for (int id : ids)
        if (id < 0 || size_t(id) >= PhonemeInventory::vocab_size())
            throw std::runtime_error("encode_phonemes: unknown phoneme id " + std::to_string(id));
    size_t H = cfg.hidden();
    Var table = emb_table(c, "phoneme.emb", PhonemeInventory::vocab_size(), H);
    Var x = ad::embedding(table, ids);
    x = ad::add(x, ad::constant(nn::sinusoidal_positions(ids.size(), H)));
    size_t layers = size_t(cfg.integer("model.encoder_layers"));
    size_t heads = size_t(cfg.integer("model.heads"));
    size_t kernel = size_t(cfg.integer("model.encoder_kernel"));
    double drop = cfg.num("model.dropout");
    for (size_t l = 0; l < layers; ++l)
        x = nn::fft_block(c, "phoneme.enc" + std::to_string(l), x, heads, kernel, drop);
    return x;
}

Var encode_pitch(Ctx& c, const Config& cfg, const std::vector<int>& midi) {
    if (midi.empty()) throw std::runtime_error("encode_pitch: empty sequence");
    std::vector<int> rows;
    rows.reserve(midi.size());
    for (int m : midi) rows.push_back(int(pitch_row(m)));
    Var table = emb_table(c, "pitch.emb", kPitchTableRows, cfg.hidden());
    return ad::embedding(table, rows);
}

Var combine_content(const Var& tf, const Var& pf) { return ad::add(tf, pf); }

Var encode_speaker(Ctx& c, const Config& cfg, const Tensor& ref_mel) {
    if (ref_mel.rank() != 2 || ref_mel.cols() != 80)
        throw std::runtime_error("encode_speaker: reference mel must be frames x 80");
    if (ref_mel.rows() < 10)
        throw std::runtime_error("encode_speaker: reference too short (< 10 frames)");
    size_t H = cfg.hidden();
    Var x = ad::constant(norm_mel(ref_mel));
    size_t layers = size_t(cfg.integer("model.speaker_layers"));
    for (size_t l = 0; l < layers; ++l)
        x = nn::rnn(c, "speaker.rnn" + std::to_string(l), x, H);
    Var pooled = ad::reshape(ad::rows_mean(x), {1, H});
    Var proj = nn::linear(c, "speaker.proj", pooled, H);
    return ad::l2_normalize(ad::reshape(proj, {H}));
}

Var encode_video(Ctx& c, const Config& cfg, const Tensor& lips) {
    if (lips.rank() != 3) throw std::runtime_error("encode_video: expected m x h x w input");
    size_t m = lips.dim(0), hh = lips.dim(1), ww = lips.dim(2);
    size_t side = size_t(cfg.integer("audio.lip_size"));
    if (hh != side || ww != side)
        throw std::runtime_error("encode_video: expected " + std::to_string(side) + "x" +
                                 std::to_string(side) + " frames, got " + std::to_string(hh) +
                                 "x" + std::to_string(ww));
    size_t C0 = size_t(cfg.integer("model.visual_channels"));
    size_t H = cfg.hidden();

    Tensor in = lips;
    in.shape = {1, m, hh, ww};
    Var x = ad::constant(std::move(in));
    // spatio-temporal front end: temporal kernel 5 stride 1, spatial 7x7 stride 2
    Var w3 = c.p("visual.front.w", {C0, 1, 5, 7, 7}, Init::gauss(1.0 / std::sqrt(5.0 * 49.0)));
    Var b3 = c.p("visual.front.b", {C0}, Init::zeros());
    x = ad::relu(ad::conv3d(x, w3, b3, 1, 2, 2, 2, 3, 3));  // C0 x m x 24 x 24
    x = ad::swap_axes01(x);                                 // m x C0 x 24 x 24

    x = resblock(c, "visual.res0", x, C0 * 2, 2);  // 12 x 12
    x = resblock(c, "visual.res1", x, C0 * 4, 2);  // 6 x 6
    x = resblock(c, "visual.res2", x, C0 * 8, 2);  // 3 x 3
    x = resblock(c, "visual.res3", x, C0 * 8, 1);  // 3 x 3
    x = ad::avgpool_spatial(x);                    // m x 8*C0
    return nn::linear(c, "visual.proj", x, H);     // m x H
}

Var adapter(Ctx& c, const std::string& name, const Var& x, bool zero_init_down) {
    size_t H = x->value.cols();
    Var h = ad::gelu(nn::linear(c, name + ".up", x, 2 * H));
    Var w = c.p(name + ".down.w", {2 * H, H},
                zero_init_down ? Init::zeros() : Init::fan_in());
    Var b = c.p(name + ".down.b", {H}, Init::zeros());
    return ad::add_rowvec(ad::matmul(h, w), b);
}

Var fusion_block(Ctx& c, const Config& cfg, const std::string& name, const Var& cf_prev,
                 const Var& vf_prime) {
    if (cf_prev->value.cols() != vf_prime->value.cols())
        throw ShapeError("fusion_block: hidden dim mismatch " + cf_prev->value.shape_str() +
                         " vs " + vf_prime->value.shape_str());
    size_t heads = size_t(cfg.integer("vcfm.heads"));
    Var sc = nn::sa_block(c, name + ".sa_c", cf_prev, heads);
    Var sv = nn::sa_block(c, name + ".sa_v", vf_prime, heads);
    Var z = nn::layer_norm_p(c, name + ".ln", nn::mha(c, name + ".ca", sc, sv, heads));
    return ad::add(cf_prev, adapter(c, name + ".adapter", z, cfg.flag("vcfm.zero_init")));
}

Var vcfm_forward(Ctx& c, const Config& cfg, const Var& cf, const Var& vf) {
    // the aligned visual feature is computed once and reused by every block
    Var vf_prime = adapter(c, "vcfm.vf_adapter", vf, false);
    diag::vf_prime_evals.fetch_add(1, std::memory_order_relaxed);
    Var out = cf;
    size_t K = size_t(cfg.integer("vcfm.blocks"));
    for (size_t k = 0; k < K; ++k)
        out = fusion_block(c, cfg, "vcfm.block" + std::to_string(k), out, vf_prime);
    return out;
}

Var predict_log_durations(Ctx& c, const Config& cfg, const Var& cf_fused) {
    size_t H = cf_fused->value.cols();
    size_t k = size_t(cfg.integer("dur.kernel"));
    double drop = cfg.num("dur.dropout");
    Var x = cf_fused;
    for (int l = 0; l < 2; ++l) {
        std::string name = "dur.conv" + std::to_string(l);
        x = ad::gelu(nn::conv1d_p(c, name, x, H, k));
        x = nn::layer_norm_p(c, name + ".ln", x);
        x = ad::dropout(x, c.rate(drop), c.next_seed());
    }
    return nn::linear(c, "dur.out", x, 1);
}

std::vector<int> durations_from_log(const Tensor& log_d) {
    std::vector<int> out(log_d.numel());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = std::max(1, int(std::lround(std::exp(log_d.data[i]))));
    return out;
}

Var length_regulate(const Var& cf_fused, const std::vector<int>& durations) {
    if (durations.size() != cf_fused->value.rows())
        throw ShapeError("length_regulate: " + std::to_string(durations.size()) +
                         " durations for " + std::to_string(cf_fused->value.rows()) + " rows");
    return ad::repeat_rows(cf_fused, durations);
}

RvqResult rvq_quantize(Ctx& c, const Config& cfg, const std::string& name, const Var& z) {
    size_t books = size_t(cfg.integer("rvq.books"));
    size_t entries = size_t(cfg.integer("rvq.entries"));
    double beta = cfg.num("rvq.beta");
    if (books < 1 || entries < 1) throw std::runtime_error("rvq: empty codebook configuration");
    size_t rows = z->value.rows(), d = z->value.cols();

    RvqResult res;
    res.codes.assign(rows, std::vector<int>(books));
    std::vector<double> resid = z->value.data;  // numeric residuals drive code selection
    Var z_q;
    for (size_t b = 0; b < books; ++b) {
        // entry 0 of each book is pinned to zero (see pad_row0), so residual
        // energy can never increase across stages
        Var book = emb_table(c, "rvq." + name + ".book" + std::to_string(b), entries, d);
        const auto& bd = book->value.data;
        std::vector<int> codes(rows);
        for (size_t i = 0; i < rows; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (size_t e = 0; e < entries; ++e) {
                double dist = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    double diff = resid[i * d + j] - bd[e * d + j];
                    dist += diff * diff;
                }
                if (dist < best) {  // strict: ties keep the lowest index
                    best = dist;
                    arg = int(e);
                }
            }
            codes[i] = arg;
            res.codes[i][size_t(b)] = arg;
            for (size_t j = 0; j < d; ++j) resid[i * d + j] -= bd[size_t(arg) * d + j];
        }
        Var picked = ad::embedding(book, codes);
        z_q = z_q ? ad::add(z_q, picked) : picked;
    }
    // straight-through: value of z_q, gradient of z
    res.z_q = ad::add(z, ad::detach(ad::sub(z_q, z)));
    Var commit = ad::scale(ad::mse(z, ad::detach(z_q)), beta);
    res.commit_loss = ad::add(commit, ad::mse(ad::detach(z), z_q));
    return res;
}

StyleResult style_extract(Ctx& c, const Config& cfg, const Var& ref_mel, const Var& frame_feat) {
    if (ref_mel->value.cols() != 80)
        throw std::runtime_error("style_extract: reference mel must be frames x 80");
    if (ref_mel->value.rows() < 10)
        throw std::runtime_error("style_extract: reference too short (< 10 frames)");
    size_t H = cfg.hidden();
    size_t heads = size_t(cfg.integer("model.heads"));
    // strided conv encoder: mel-rate reference -> shorter latent sequence
    Var x = ad::gelu(nn::conv1d_p(c, "style.conv0", ref_mel, H, 5, 1, 2));
    x = ad::gelu(nn::conv1d_p(c, "style.conv1", x, H, 5, 1, 2));
    RvqResult q = rvq_quantize(c, cfg, "style", x);
    StyleResult out;
    out.style_seq = nn::mha(c, "style.ca", frame_feat, q.z_q, heads);
    out.commit_loss = q.commit_loss;
    return out;
}

}  // namespace psinger::model
