#include "peftlab/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "peftlab/errors.hpp"
#include "peftlab/ops.hpp"
#include "peftlab/tensor_io.hpp"

namespace peftlab {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

Tensor init_gaussian(const std::string& name, std::vector<int> shape, double stddev,
                     std::uint64_t seed) {
    Rng rng(seed, hash_name(name));
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = rng.normal(0.0, stddev);
    return Tensor::from_data(std::move(shape), std::move(data));
}

Tensor init_xavier(const std::string& name, std::vector<int> shape, int fan_in, int fan_out,
                   std::uint64_t seed) {
    return init_gaussian(name, std::move(shape), std::sqrt(2.0 / (fan_in + fan_out)), seed);
}

// Token embeddings are seeded with explicit coordinate ramps and waves so
// the decoder can relate prompt coordinates to image positions from the
// first training step.
Tensor init_pos_embed(int grid, int width, std::uint64_t seed) {
    Rng rng(seed, hash_name("encoder.pos_embed"));
    std::vector<double> data(static_cast<std::size_t>(grid) * grid * width);
    for (int ty = 0; ty < grid; ++ty) {
        for (int tx = 0; tx < grid; ++tx) {
            const std::size_t base = (static_cast<std::size_t>(ty) * grid + tx) * width;
            const double xn = (tx + 0.5) / grid, yn = (ty + 0.5) / grid;
            for (int c = 0; c < width; ++c) {
                double v = rng.normal(0.0, 0.02);
                switch (c) {
                    case 0: v = xn - 0.5; break;
                    case 1: v = yn - 0.5; break;
                    case 2: v = 0.5 * std::sin(kTwoPi * xn); break;
                    case 3: v = 0.5 * std::cos(kTwoPi * xn); break;
                    case 4: v = 0.5 * std::sin(kTwoPi * yn); break;
                    case 5: v = 0.5 * std::cos(kTwoPi * yn); break;
                    default: break;
                }
                data[base + c] = v;
            }
        }
    }
    return Tensor::from_data({grid * grid, width}, std::move(data));
}

Tensor site_matmul(const WeightSite& site, const Tensor& x, const Tensor& bias) {
    if (site.lora) {
        Tensor out = matmul(x, site.base);
        Tensor delta = matmul(matmul(x, site.lora->beta), site.lora->alpha);
        return add_rowvec(add(out, delta), bias);
    }
    const Tensor w = site.reparam ? site.reparam->weight() : site.base;
    return add_rowvec(matmul(x, w), bias);
}

Tensor site_conv(const WeightSite& site, const Tensor& x, const Tensor& bias, int stride,
                 int pad) {
    const Tensor w = site.reparam ? site.reparam->weight() : site.base;
    return bias_nchw(conv2d(x, w, stride, pad), bias);
}

ParamKind parse_kind(const std::string& name) {
    if (name == "transformer") return ParamKind::Transformer;
    if (name == "conv") return ParamKind::Conv;
    if (name == "decoder") return ParamKind::Decoder;
    if (name == "prompt") return ParamKind::Prompt;
    throw ValidationError("unknown parameter kind '" + name + "'");
}

}  // namespace

std::string kind_name(ParamKind kind) {
    switch (kind) {
        case ParamKind::Transformer: return "transformer";
        case ParamKind::Conv: return "conv";
        case ParamKind::Decoder: return "decoder";
        case ParamKind::Prompt: return "prompt";
    }
    throw ContractError("unknown parameter kind");
}

void ModelConfig::validate() const {
    if (img_size <= 0 || patch <= 0 || width <= 0 || heads <= 0 || depth <= 0 ||
        conv_blocks <= 0 || mlp_ratio <= 0) {
        throw ConfigError("model config fields must be positive");
    }
    if (img_size % patch != 0) throw ConfigError("img_size must be divisible by patch");
    if (width % heads != 0) throw ConfigError("width must be divisible by heads");
}

SegModel::SegModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg.validate();
    const int w = cfg.width;
    const int mlp = cfg.width * cfg.mlp_ratio;

    patch_.name = "encoder.patch.weight";
    patch_.kind = ParamKind::Transformer;
    patch_.base = init_xavier(patch_.name, {w, 1, cfg.patch, cfg.patch}, cfg.patch * cfg.patch,
                              w * cfg.patch * cfg.patch, init_seed);
    patch_bias_ = Tensor::zeros({w});
    pos_embed_ = init_pos_embed(cfg.grid(), w, init_seed);

    blocks_.resize(static_cast<std::size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i) {
        auto& blk = blocks_[static_cast<std::size_t>(i)];
        const std::string prefix = "encoder.tf" + std::to_string(i) + ".";
        blk.ln1_gain = Tensor::full({w}, 1.0);
        blk.ln1_bias = Tensor::zeros({w});
        blk.ln2_gain = Tensor::full({w}, 1.0);
        blk.ln2_bias = Tensor::zeros({w});
        auto attn_site = [&](WeightSite& site, const std::string& tag) {
            site.name = prefix + "attn." + tag + ".weight";
            site.kind = ParamKind::Transformer;
            site.attention = true;
            site.base = init_xavier(site.name, {w, w}, w, w, init_seed);
        };
        attn_site(blk.wq, "q");
        attn_site(blk.wk, "k");
        attn_site(blk.wv, "v");
        attn_site(blk.wo, "o");
        blk.bq = Tensor::zeros({w});
        blk.bk = Tensor::zeros({w});
        blk.bv = Tensor::zeros({w});
        blk.bo = Tensor::zeros({w});
        blk.w1.name = prefix + "mlp.w1.weight";
        blk.w1.kind = ParamKind::Transformer;
        blk.w1.base = init_xavier(blk.w1.name, {w, mlp}, w, mlp, init_seed);
        blk.b1 = Tensor::zeros({mlp});
        blk.w2.name = prefix + "mlp.w2.weight";
        blk.w2.kind = ParamKind::Transformer;
        blk.w2.base = init_xavier(blk.w2.name, {mlp, w}, mlp, w, init_seed);
        blk.b2 = Tensor::zeros({w});
    }

    convs_.resize(static_cast<std::size_t>(cfg.conv_blocks));
    for (int i = 0; i < cfg.conv_blocks; ++i) {
        auto& cb = convs_[static_cast<std::size_t>(i)];
        cb.w.name = "encoder.conv" + std::to_string(i) + ".weight";
        cb.w.kind = ParamKind::Conv;
        cb.w.base = init_xavier(cb.w.name, {w, w, 3, 3}, w * 9, w * 9, init_seed);
        cb.b = Tensor::zeros({w});
    }

    fuse0_w_ = init_xavier("decoder.fuse0.weight", {w, w, 3, 3}, w * 9, w * 9, init_seed);
    fuse0_b_ = Tensor::zeros({w});
    fuse1_w_ = init_xavier("decoder.fuse1.weight", {w, w, 3, 3}, w * 9, w * 9, init_seed);
    fuse1_b_ = Tensor::zeros({w});
    out_w_ = init_xavier("decoder.out.weight", {1, w, 1, 1}, w, 1, init_seed);
    // Negative prior: foreground is the minority class in every scenario.
    out_b_ = Tensor::full({1}, -2.0);

    corner0_w_ = init_xavier("prompt.corner0.weight", {10, w}, 10, w, init_seed);
    corner0_b_ = Tensor::zeros({w});
    corner1_w_ = init_xavier("prompt.corner1.weight", {10, w}, 10, w, init_seed);
    corner1_b_ = Tensor::zeros({w});
}

Tensor SegModel::corner_embedding(int which, double x, double y) const {
    const std::vector<double> feats = {
        x,
        y,
        std::sin(kTwoPi * x),
        std::cos(kTwoPi * x),
        std::sin(kTwoPi * y),
        std::cos(kTwoPi * y),
        std::sin(2.0 * kTwoPi * x),
        std::cos(2.0 * kTwoPi * x),
        std::sin(2.0 * kTwoPi * y),
        std::cos(2.0 * kTwoPi * y),
    };
    const Tensor feat = Tensor::from_data({1, 10}, feats);
    const Tensor w = which == 0 ? corner0_w_ : corner1_w_;
    const Tensor b = which == 0 ? corner0_b_ : corner1_b_;
    return reshape(add_rowvec(matmul(feat, w), b), {cfg_.width});
}

Tensor SegModel::encode(const Tensor& image) const {
    const int w = cfg_.width, g = cfg_.grid(), hd = w / cfg_.heads;

    Tensor x = site_conv(patch_, image, patch_bias_, cfg_.patch, 0);  // (1, w, g, g)
    Tensor t = add(transpose(reshape(x, {w, g * g})), pos_embed_);    // (tokens, w)

    for (const auto& blk : blocks_) {
        Tensor h = add_rowvec(mul_rowvec(layernorm(t, 1), blk.ln1_gain), blk.ln1_bias);
        Tensor q = site_matmul(blk.wq, h, blk.bq);
        Tensor k = site_matmul(blk.wk, h, blk.bk);
        Tensor v = site_matmul(blk.wv, h, blk.bv);
        std::vector<Tensor> heads;
        heads.reserve(static_cast<std::size_t>(cfg_.heads));
        for (int hi = 0; hi < cfg_.heads; ++hi) {
            Tensor qh = slice(q, 1, hi * hd, hd);
            Tensor kh = slice(k, 1, hi * hd, hd);
            Tensor vh = slice(v, 1, hi * hd, hd);
            Tensor at = softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(hd)), 1);
            heads.push_back(matmul(at, vh));
        }
        Tensor o = site_matmul(blk.wo, concat(heads, 1), blk.bo);
        if (blk.adapter) {
            o = add(o, matmul(relu(matmul(o, blk.adapter->down)), blk.adapter->up));
        }
        t = add(t, o);
        Tensor h2 = add_rowvec(mul_rowvec(layernorm(t, 1), blk.ln2_gain), blk.ln2_bias);
        Tensor m = site_matmul(blk.w2, gelu(site_matmul(blk.w1, h2, blk.b1)), blk.b2);
        t = add(t, m);
    }

    Tensor f = reshape(transpose(t), {1, w, g, g});
    for (const auto& cb : convs_) f = gelu(site_conv(cb.w, f, cb.b, 1, 1));
    return f;
}

Tensor SegModel::decode(const Tensor& features, const BoxPrompt& prompt) const {
    const double s = cfg_.img_size;
    Tensor pe = add(corner_embedding(0, prompt.x0 / s, prompt.y0 / s),
                    corner_embedding(1, prompt.x1 / s, prompt.y1 / s));
    Tensor f = bias_nchw(features, pe);
    f = gelu(bias_nchw(conv2d(f, fuse0_w_, 1, 1), fuse0_b_));
    f = gelu(bias_nchw(conv2d(f, fuse1_w_, 1, 1), fuse1_b_));
    Tensor up = upsample_bilinear(f, cfg_.patch);
    return bias_nchw(conv2d(up, out_w_, 1, 0), out_b_);
}

Tensor SegModel::forward(const Tensor& image, const BoxPrompt& prompt) const {
    const std::vector<int> want = {1, 1, cfg_.img_size, cfg_.img_size};
    if (image.shape() != want) {
        throw ValidationError("forward: expected image " + shape_str(want) + ", got " +
                              shape_str(image.shape()));
    }
    for (const double v : image.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ValidationError("forward: image values must lie in [0, 1]");
        }
    }
    prompt.validate(cfg_.img_size);
    return decode(encode(image), prompt);
}

std::vector<ParamEntry> SegModel::registry() const {
    std::vector<ParamEntry> out;
    auto push = [&out](const std::string& name, ParamKind kind, const Tensor& t) {
        out.push_back({name, kind, t});
    };
    auto push_site = [&push](const WeightSite& site) {
        if (site.reparam) {
            push(site.name + ".U", site.kind, site.reparam->u);
            push(site.name + ".p", site.kind, site.reparam->p);
            push(site.name + ".V", site.kind, site.reparam->v);
            return;
        }
        push(site.name, site.kind, site.base);
        if (site.lora) {
            push(site.name + ".lora_beta", site.kind, site.lora->beta);
            push(site.name + ".lora_alpha", site.kind, site.lora->alpha);
        }
    };

    push_site(patch_);
    push("encoder.patch.bias", ParamKind::Transformer, patch_bias_);
    push("encoder.pos_embed", ParamKind::Transformer, pos_embed_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& blk = blocks_[i];
        const std::string prefix = "encoder.tf" + std::to_string(i) + ".";
        push(prefix + "ln1.gain", ParamKind::Transformer, blk.ln1_gain);
        push(prefix + "ln1.bias", ParamKind::Transformer, blk.ln1_bias);
        push_site(blk.wq);
        push(prefix + "attn.q.bias", ParamKind::Transformer, blk.bq);
        push_site(blk.wk);
        push(prefix + "attn.k.bias", ParamKind::Transformer, blk.bk);
        push_site(blk.wv);
        push(prefix + "attn.v.bias", ParamKind::Transformer, blk.bv);
        push_site(blk.wo);
        push(prefix + "attn.o.bias", ParamKind::Transformer, blk.bo);
        if (blk.adapter) {
            push(prefix + "adapter.down", ParamKind::Transformer, blk.adapter->down);
            push(prefix + "adapter.up", ParamKind::Transformer, blk.adapter->up);
        }
        push(prefix + "ln2.gain", ParamKind::Transformer, blk.ln2_gain);
        push(prefix + "ln2.bias", ParamKind::Transformer, blk.ln2_bias);
        push_site(blk.w1);
        push(prefix + "mlp.w1.bias", ParamKind::Transformer, blk.b1);
        push_site(blk.w2);
        push(prefix + "mlp.w2.bias", ParamKind::Transformer, blk.b2);
    }
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        push_site(convs_[i].w);
        push("encoder.conv" + std::to_string(i) + ".bias", ParamKind::Conv, convs_[i].b);
    }
    push("decoder.fuse0.weight", ParamKind::Decoder, fuse0_w_);
    push("decoder.fuse0.bias", ParamKind::Decoder, fuse0_b_);
    push("decoder.fuse1.weight", ParamKind::Decoder, fuse1_w_);
    push("decoder.fuse1.bias", ParamKind::Decoder, fuse1_b_);
    push("decoder.out.weight", ParamKind::Decoder, out_w_);
    push("decoder.out.bias", ParamKind::Decoder, out_b_);
    push("prompt.corner0.weight", ParamKind::Prompt, corner0_w_);
    push("prompt.corner0.bias", ParamKind::Prompt, corner0_b_);
    push("prompt.corner1.weight", ParamKind::Prompt, corner1_w_);
    push("prompt.corner1.bias", ParamKind::Prompt, corner1_b_);
    return out;
}

std::vector<WeightSite*> SegModel::encoder_sites() {
    std::vector<WeightSite*> sites;
    sites.push_back(&patch_);
    for (auto& blk : blocks_) {
        sites.push_back(&blk.wq);
        sites.push_back(&blk.wk);
        sites.push_back(&blk.wv);
        sites.push_back(&blk.wo);
        sites.push_back(&blk.w1);
        sites.push_back(&blk.w2);
    }
    for (auto& cb : convs_) sites.push_back(&cb.w);
    return sites;
}

std::vector<const WeightSite*> SegModel::encoder_sites() const {
    auto sites = const_cast<SegModel*>(this)->encoder_sites();
    return {sites.begin(), sites.end()};
}

void SegModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw ValidationError("cannot write manifest in " + dir.string());
    manifest << "peftlab-checkpoint 1\n";
    manifest << "cfg img_size " << cfg_.img_size << "\n";
    manifest << "cfg patch " << cfg_.patch << "\n";
    manifest << "cfg width " << cfg_.width << "\n";
    manifest << "cfg heads " << cfg_.heads << "\n";
    manifest << "cfg depth " << cfg_.depth << "\n";
    manifest << "cfg conv_blocks " << cfg_.conv_blocks << "\n";
    manifest << "cfg mlp_ratio " << cfg_.mlp_ratio << "\n";
    for (const WeightSite* site : encoder_sites()) {
        if (site->reparam) {
            manifest << "reparam " << site->name << " " << mode_name(site->reparam->mode) << "\n";
        }
        if (site->lora) manifest << "lora " << site->name << " " << site->lora->rank << "\n";
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (blocks_[i].adapter) {
            manifest << "adapter " << i << " " << blocks_[i].adapter->bottleneck << "\n";
        }
    }
    for (const auto& entry : registry()) {
        const std::string file = entry.name + ".bin";
        save_tensor(dir / file, entry.tensor);
        manifest << "param " << entry.name << " " << kind_name(entry.kind) << " "
                 << (entry.tensor.requires_grad() ? 1 : 0) << " " << file << "\n";
    }
}

SegModel SegModel::load(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw ValidationError("cannot open manifest in " + dir.string());
    std::string line;
    if (!std::getline(manifest, line) || line != "peftlab-checkpoint 1") {
        throw ValidationError("bad checkpoint header in " + dir.string());
    }

    std::map<std::string, int> cfg_map;
    struct ParamLine {
        std::string name, kind, file;
        bool trainable;
    };
    std::vector<ParamLine> params;
    std::vector<std::pair<std::string, std::string>> reparams;  // site, mode
    std::vector<std::pair<std::string, int>> loras;             // site, rank
    std::vector<std::pair<int, int>> adapters;                  // block, bottleneck

    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string tag;
        is >> tag;
        if (tag == "cfg") {
            std::string key;
            int value;
            is >> key >> value;
            cfg_map[key] = value;
        } else if (tag == "reparam") {
            std::string site, mode;
            is >> site >> mode;
            reparams.emplace_back(site, mode);
        } else if (tag == "lora") {
            std::string site;
            int rank;
            is >> site >> rank;
            loras.emplace_back(site, rank);
        } else if (tag == "adapter") {
            int block, b;
            is >> block >> b;
            adapters.emplace_back(block, b);
        } else if (tag == "param") {
            ParamLine p;
            int trainable;
            is >> p.name >> p.kind >> trainable >> p.file;
            p.trainable = trainable != 0;
            params.push_back(std::move(p));
        } else {
            throw ValidationError("unknown manifest line: " + line);
        }
        if (!is) throw ValidationError("malformed manifest line: " + line);
    }

    ModelConfig cfg;
    auto get = [&cfg_map](const char* key, int fallback) {
        auto it = cfg_map.find(key);
        return it == cfg_map.end() ? fallback : it->second;
    };
    cfg.img_size = get("img_size", cfg.img_size);
    cfg.patch = get("patch", cfg.patch);
    cfg.width = get("width", cfg.width);
    cfg.heads = get("heads", cfg.heads);
    cfg.depth = get("depth", cfg.depth);
    cfg.conv_blocks = get("conv_blocks", cfg.conv_blocks);
    cfg.mlp_ratio = get("mlp_ratio", cfg.mlp_ratio);

    SegModel model(cfg, 0);

    // Recreate strategy attachments with placeholder values; the param
    // pass below overwrites every tensor from its file.
    auto find_site = [&model](const std::string& name) -> WeightSite& {
        for (WeightSite* site : model.encoder_sites()) {
            if (site->name == name) return *site;
        }
        throw ValidationError("manifest references unknown weight site '" + name + "'");
    };
    for (const auto& [site_name, mode_str] : reparams) {
        WeightSite& site = find_site(site_name);
        Matricized mz = matricize(site.base);
        SvdReparam rp;
        rp.mode = parse_mode(mode_str);
        rp.orig_shape = mz.orig_shape;
        rp.transposed = mz.transposed;
        const int d = mz.m.rows, k = mz.m.cols;
        rp.u = Tensor::zeros({d, d});
        rp.p = Tensor::zeros({d});
        rp.v = Tensor::zeros({k, d});
        site.reparam = std::move(rp);
    }
    for (const auto& [site_name, rank] : loras) {
        WeightSite& site = find_site(site_name);
        LoraAttachment lora;
        lora.rank = rank;
        lora.beta = Tensor::zeros({site.base.shape()[0], rank});
        lora.alpha = Tensor::zeros({rank, site.base.shape()[1]});
        site.lora = std::move(lora);
    }
    for (const auto& [block_idx, bottleneck] : adapters) {
        if (block_idx < 0 || block_idx >= static_cast<int>(model.blocks_.size())) {
            throw ValidationError("manifest adapter block out of range");
        }
        AdapterBlock ab;
        ab.bottleneck = bottleneck;
        ab.down = Tensor::zeros({cfg.width, bottleneck});
        ab.up = Tensor::zeros({bottleneck, cfg.width});
        model.blocks_[static_cast<std::size_t>(block_idx)].adapter = std::move(ab);
    }

    std::unordered_map<std::string, ParamLine*> by_name;
    for (auto& p : params) by_name[p.name] = &p;
    auto reg = model.registry();
    if (reg.size() != params.size()) {
        throw ValidationError("checkpoint parameter count mismatch: manifest " +
                              std::to_string(params.size()) + " vs model " +
                              std::to_string(reg.size()));
    }
    for (auto& entry : reg) {
        auto it = by_name.find(entry.name);
        if (it == by_name.end()) {
            throw ValidationError("checkpoint missing parameter '" + entry.name + "'");
        }
        const ParamLine& p = *it->second;
        if (parse_kind(p.kind) != entry.kind) {
            throw ValidationError("checkpoint kind mismatch for '" + entry.name + "'");
        }
        Tensor stored = load_tensor(dir / p.file);
        if (stored.shape() != entry.tensor.shape()) {
            throw ValidationError("checkpoint shape mismatch for '" + entry.name + "': " +
                                  shape_str(stored.shape()) + " vs " +
                                  shape_str(entry.tensor.shape()));
        }
        entry.tensor.values() = stored.values();
        entry.tensor.set_requires_grad(p.trainable);
    }
    return model;
}

}  // namespace peftlab
