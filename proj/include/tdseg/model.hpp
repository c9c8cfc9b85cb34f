#pragma once

#include <random>

#include "tdseg/optim.hpp"
#include "tdseg/ops.hpp"

namespace tdseg {

struct ModelConfig {
    int in_channels = 1;
    int base_channels = 16;
    int num_classes = 4;  // K, includes background
    int num_scenes = 2;
    std::vector<int> dilation_rates = {1, 2, 4, 8};
    int hidden_units = 64;
    int image_height = 32;
    int image_width = 32;
    int downsample = 4;  // encoder reduction factor: 1, 2 or 4

    int feature_channels() const { return base_channels * 4; }

    void validate() const {
        if (in_channels < 1) throw ShapeError("model: in_channels " + std::to_string(in_channels));
        if (base_channels < 1) throw ShapeError("model: base_channels " + std::to_string(base_channels));
        if (num_classes < 2 || num_classes > 255)
            throw ShapeError("model: num_classes " + std::to_string(num_classes));
        if (num_scenes < 2) throw ShapeError("model: num_scenes " + std::to_string(num_scenes));
        if (hidden_units < 1) throw ShapeError("model: hidden_units " + std::to_string(hidden_units));
        if (downsample != 1 && downsample != 2 && downsample != 4)
            throw ShapeError("model: downsample " + std::to_string(downsample) + ", want 1, 2 or 4");
        if (image_height < downsample || image_width < downsample ||
            image_height % downsample != 0 || image_width % downsample != 0)
            throw ShapeError("model: image size " + std::to_string(image_height) + "x" +
                             std::to_string(image_width) + " not divisible by downsample " +
                             std::to_string(downsample));
        if (dilation_rates.empty()) throw ShapeError("model: empty dilation_rates");
        for (int r : dilation_rates) {
            if (r < 1) throw ShapeError("model: dilation rate " + std::to_string(r));
            const int footprint = 2 * r + 1;  // 3x3 kernel
            if (footprint > image_height || footprint > image_width)
                throw ShapeError("model: dilation " + std::to_string(r) + " footprint " +
                                 std::to_string(footprint) + " exceeds image " +
                                 std::to_string(image_height) + "x" + std::to_string(image_width));
        }
    }

    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        const auto feed = [&h](int v) { h = fnv1a(&v, sizeof v, h); };
        feed(in_channels);
        feed(base_channels);
        feed(num_classes);
        feed(num_scenes);
        feed(hidden_units);
        feed(image_height);
        feed(image_width);
        feed(downsample);
        for (int r : dilation_rates) feed(r);
        return h;
    }
};

// Kaiming fan-in init: N(0, sqrt(2/fan_in)), biases zero.
inline Tensor kaiming_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

struct ConvLayer {
    Parameter weight;  // [Cout,Cin,k,k]
    Parameter bias;    // [Cout]

    ConvLayer() = default;
    ConvLayer(const std::string& name, int cout, int cin, int k, std::mt19937_64& rng)
        : weight(name + ".weight", kaiming_normal({cout, cin, k, k}, cin * k * k, rng)),
          bias(name + ".bias", Tensor({cout})) {}

    Tensor operator()(const Tensor& x, int dilation = 1) const {
        return conv2d(x, weight.value, bias.value, dilation);
    }
};

struct DenseLayer {
    Parameter weight;  // [m,n]
    Parameter bias;    // [m]

    DenseLayer() = default;
    DenseLayer(const std::string& name, int m, int n, std::mt19937_64& rng)
        : weight(name + ".weight", kaiming_normal({m, n}, n, rng)),
          bias(name + ".bias", Tensor({m})) {}

    Tensor operator()(const Tensor& x) const { return dense(x, weight.value, bias.value); }
};

// Cascade of dilated 3x3 convolutions: stage i applies rates[0..i] in series
// (the chain is shared), every stage tap plus the identity branch are summed.
// Spatial size is preserved throughout.
struct ContextEnsemble {
    std::vector<ConvLayer> stages;
    std::vector<int> rates;

    ContextEnsemble() = default;
    ContextEnsemble(const std::string& name, int channels, std::vector<int> dilation_rates,
                    std::mt19937_64& rng)
        : rates(std::move(dilation_rates)) {
        stages.reserve(rates.size());
        for (std::size_t i = 0; i < rates.size(); ++i)
            stages.emplace_back(name + ".stage" + std::to_string(i), channels, channels, 3, rng);
    }

    Tensor operator()(const Tensor& x) const {
        Tensor acc = x;
        Tensor cur = x;
        for (std::size_t i = 0; i < stages.size(); ++i) {
            cur = relu(stages[i](cur, rates[i]));
            acc = add(acc, cur);
        }
        return acc;
    }
};

struct ModelOutputs {
    Tensor seg_logits;    // [K,H,W]
    Tensor class_logits;  // [K-1]
    Tensor scene_logits;  // [S]
};

// Encoder -> three pairwise task-task context ensembles -> shared latent
// space -> segmentation / class / scene decoders.
class TaskDecompModel {
public:
    ModelConfig cfg;

    ConvLayer enc1, enc2, enc3;
    ContextEnsemble ce_seg_class, ce_seg_scene, ce_class_scene;
    ConvLayer latent_proj;               // 1x1, 3C -> C
    std::vector<ConvLayer> seg_stages;   // stage 0 at latent res, one more per 2x upsample
    ConvLayer seg_out;                   // 1x1 -> K
    DenseLayer cls_fc1, cls_fc2;
    DenseLayer scn_fc1, scn_fc2;

    TaskDecompModel(ModelConfig config, std::uint64_t seed) : cfg(std::move(config)) {
        cfg.validate();
        std::mt19937_64 rng(seed);
        const int b = cfg.base_channels;
        const int c = cfg.feature_channels();

        enc1 = ConvLayer("encoder.conv1", b, cfg.in_channels, 3, rng);
        enc2 = ConvLayer("encoder.conv2", 2 * b, b, 3, rng);
        enc3 = ConvLayer("encoder.conv3", c, 2 * b, 3, rng);

        ce_seg_class = ContextEnsemble("ce.seg_class", c, cfg.dilation_rates, rng);
        ce_seg_scene = ContextEnsemble("ce.seg_scene", c, cfg.dilation_rates, rng);
        ce_class_scene = ContextEnsemble("ce.class_scene", c, cfg.dilation_rates, rng);
        latent_proj = ConvLayer("latent.proj", c, 3 * c, 1, rng);

        int cur = c;
        for (int i = 0; i <= upsample_steps(); ++i) {
            const int next = std::max(4, cur / 2);
            seg_stages.emplace_back("seg_decoder.conv" + std::to_string(i), next, cur, 3, rng);
            cur = next;
        }
        seg_out = ConvLayer("seg_decoder.out", cfg.num_classes, cur, 1, rng);

        cls_fc1 = DenseLayer("class_head.fc1", cfg.hidden_units, c, rng);
        cls_fc2 = DenseLayer("class_head.fc2", cfg.num_classes - 1, cfg.hidden_units, rng);
        scn_fc1 = DenseLayer("scene_head.fc1", cfg.hidden_units, c, rng);
        scn_fc2 = DenseLayer("scene_head.fc2", cfg.num_scenes, cfg.hidden_units, rng);
    }

    int upsample_steps() const { return cfg.downsample == 4 ? 2 : cfg.downsample == 2 ? 1 : 0; }

    // Single shared feature map at 1/downsample of the input resolution.
    Tensor encode(const Tensor& image) const {
        Tensor h = relu(enc1(image));
        if (cfg.downsample >= 2) h = avg_pool2(h);
        h = relu(enc2(h));
        if (cfg.downsample == 4) h = avg_pool2(h);
        return relu(enc3(h));
    }

    // Combines the three pairwise ensemble outputs into the shared latent
    // space: channel concat followed by a 1x1 projection back to C channels.
    Tensor latent_space(const Tensor& f_sc, const Tensor& f_ss, const Tensor& f_cs) const {
        if (f_sc.shape() != f_ss.shape() || f_sc.shape() != f_cs.shape())
            throw ShapeError("latent_space: mismatched inputs " + shape_str(f_sc.shape()) + " " +
                             shape_str(f_ss.shape()) + " " + shape_str(f_cs.shape()));
        return latent_proj(concat_channels({f_sc, f_ss, f_cs}));
    }

    Tensor decode_segmentation(const Tensor& latent) const {
        Tensor s = relu(seg_stages[0](latent));
        for (int i = 1; i < static_cast<int>(seg_stages.size()); ++i) {
            s = upsample_nearest(s, 2);
            s = relu(seg_stages[i](s));
        }
        return seg_out(s);
    }

    ModelOutputs forward(const Tensor& image) const {
        const Shape want = {cfg.in_channels, cfg.image_height, cfg.image_width};
        if (image.shape() != want)
            throw ShapeError("forward: image " + shape_str(image.shape()) + ", model expects " +
                             shape_str(want));
        const Tensor feat = encode(image);
        const Tensor latent = latent_space(ce_seg_class(feat), ce_seg_scene(feat), ce_class_scene(feat));

        ModelOutputs out;
        out.seg_logits = decode_segmentation(latent);
        const Tensor pooled = global_avg_pool(latent);
        out.class_logits = cls_fc2(relu(cls_fc1(pooled)));
        out.scene_logits = scn_fc2(relu(scn_fc1(pooled)));
        return out;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps;
        const auto conv = [&ps](ConvLayer& l) {
            ps.push_back(&l.weight);
            ps.push_back(&l.bias);
        };
        const auto fc = [&ps](DenseLayer& l) {
            ps.push_back(&l.weight);
            ps.push_back(&l.bias);
        };
        conv(enc1);
        conv(enc2);
        conv(enc3);
        for (auto* ce : {&ce_seg_class, &ce_seg_scene, &ce_class_scene})
            for (ConvLayer& l : ce->stages) conv(l);
        conv(latent_proj);
        for (ConvLayer& l : seg_stages) conv(l);
        conv(seg_out);
        fc(cls_fc1);
        fc(cls_fc2);
        fc(scn_fc1);
        fc(scn_fc2);
        return ps;
    }

    // Parameters owned by the segmentation decoder branch only (everything
    // after the shared latent space on the segmentation path).
    std::vector<Parameter*> seg_decoder_parameters() {
        std::vector<Parameter*> ps;
        for (ConvLayer& l : seg_stages) {
            ps.push_back(&l.weight);
            ps.push_back(&l.bias);
        }
        ps.push_back(&seg_out.weight);
        ps.push_back(&seg_out.bias);
        return ps;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (Parameter* p : parameters()) n += p->value.size();
        return n;
    }
};

}  // namespace tdseg
