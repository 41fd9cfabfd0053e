#include "rotsym/model.hpp"

#include <algorithm>
#include <cmath>

#include "rotsym/errors.hpp"
#include "rotsym/numerics.hpp"

namespace rotsym {

namespace {

constexpr double kLnEpsilon = 1e-5;

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw DimensionError(name + ": expected " + std::to_string(rows) + "x" +
                             std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
    }
}

// y = x * w^T + b with b broadcast over rows.
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = matmul_nt(x, w);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        for (std::size_t j = 0; j < y.cols(); ++j) {
            y(i, j) += b(0, j);
        }
    }
    return y;
}

void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* r = m.row(i);
        double mx = r[0];
        for (std::size_t j = 1; j < m.cols(); ++j) {
            mx = std::max(mx, r[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        for (std::size_t j = 0; j < m.cols(); ++j) {
            r[j] /= sum;
        }
    }
}

double log_sum_exp_row(const Matrix& logits) {
    double mx = logits(0, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) {
        mx = std::max(mx, logits(0, j));
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
        sum += std::exp(logits(0, j) - mx);
    }
    return mx + std::log(sum);
}

} // namespace

void TransformerConfig::validate() const {
    const auto positive = [](std::size_t v, const char* name) {
        if (v == 0) {
            throw ConfigError(std::string("config: ") + name + " must be >= 1");
        }
    };
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(d_model, "d_model");
    positive(d_head, "d_head");
    positive(d_ff, "d_ff");
    positive(vocab_size, "vocab_size");
    positive(n_classes, "n_classes");
    positive(seq_len, "seq_len");
    if (d_model != n_heads * d_head) {
        throw ConfigError("config: d_model (" + std::to_string(d_model) +
                          ") must equal n_heads*d_head (" + std::to_string(n_heads * d_head) +
                          ")");
    }
}

void TransformerModel::validate() const {
    config.validate();
    require_shape(embedding, config.vocab_size, config.d_model, "embedding");
    if (blocks.size() != config.n_layers) {
        throw DimensionError("model: expected " + std::to_string(config.n_layers) +
                             " blocks, got " + std::to_string(blocks.size()));
    }
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string at = "layer." + std::to_string(l);
        const AttentionLayerParams& attn = blocks[l].attn;
        if (attn.heads.size() != config.n_heads) {
            throw DimensionError(at + ": expected " + std::to_string(config.n_heads) +
                                 " heads, got " + std::to_string(attn.heads.size()));
        }
        for (std::size_t h = 0; h < attn.heads.size(); ++h) {
            const AttentionHeadParams& head = attn.heads[h];
            const std::string hn = at + ".head." + std::to_string(h);
            require_shape(head.w_q, config.d_head, config.d_model, hn + ".wq");
            require_shape(head.b_q, 1, config.d_head, hn + ".bq");
            require_shape(head.w_k, config.d_head, config.d_model, hn + ".wk");
            require_shape(head.b_k, 1, config.d_head, hn + ".bk");
            require_shape(head.w_v, config.d_head, config.d_model, hn + ".wv");
            require_shape(head.b_v, 1, config.d_head, hn + ".bv");
            require_shape(head.w_o, config.d_model, config.d_head, hn + ".wo");
        }
        require_shape(attn.b_o, 1, config.d_model, at + ".attn.bo");
        require_shape(attn.ln_gain, 1, config.d_model, at + ".attn.ln_gain");
        require_shape(attn.ln_bias, 1, config.d_model, at + ".attn.ln_bias");
        const FfnParams& ffn = blocks[l].ffn;
        require_shape(ffn.w_i, config.d_ff, config.d_model, at + ".ffn.wi");
        require_shape(ffn.b_i, 1, config.d_ff, at + ".ffn.bi");
        require_shape(ffn.w_o, config.d_model, config.d_ff, at + ".ffn.wo");
        require_shape(ffn.b_o, 1, config.d_model, at + ".ffn.bo");
        require_shape(ffn.ln_gain, 1, config.d_model, at + ".ffn.ln_gain");
        require_shape(ffn.ln_bias, 1, config.d_model, at + ".ffn.ln_bias");
    }
    require_shape(classifier_w, config.n_classes, config.d_model, "classifier.w");
    require_shape(classifier_b, 1, config.n_classes, "classifier.b");
}

Matrix layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
        bias.cols() != x.cols()) {
        throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(x.cols()));
    }
    Matrix out(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* r = x.row(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            mean += r[j];
        }
        mean /= d;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double c = r[j] - mean;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLnEpsilon);
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out(i, j) = (r[j] - mean) * inv * gain(0, j) + bias(0, j);
        }
    }
    return out;
}

Matrix forward(const TransformerModel& model, std::span<const std::size_t> tokens,
               ForwardTrace* trace) {
    const TransformerConfig& cfg = model.config;
    if (tokens.size() != cfg.seq_len) {
        throw ValueError("forward: expected " + std::to_string(cfg.seq_len) + " tokens, got " +
                         std::to_string(tokens.size()));
    }
    for (std::size_t t : tokens) {
        if (t >= cfg.vocab_size) {
            throw ValueError("forward: token " + std::to_string(t) + " out of range (vocab " +
                             std::to_string(cfg.vocab_size) + ")");
        }
    }
    const std::size_t n = cfg.seq_len;

    Matrix x(n, cfg.d_model);
    for (std::size_t t = 0; t < n; ++t) {
        const double* src = model.embedding.row(tokens[t]);
        std::copy(src, src + cfg.d_model, x.row(t));
    }

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    for (const TransformerBlock& block : model.blocks) {
        if (trace) {
            trace->attn_in.push_back(x);
            trace->attn_probs.emplace_back();
        }
        // Multi-head attention; per-head outputs land in the columns of
        // concat, which is exactly the input of the output projection.
        Matrix concat(n, cfg.d_model);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const AttentionHeadParams& head = block.attn.heads[h];
            const Matrix xq = affine(x, head.w_q, head.b_q);
            const Matrix xk = affine(x, head.w_k, head.b_k);
            const Matrix xv = affine(x, head.w_v, head.b_v);
            Matrix scores = matmul_nt(xq, xk);
            scores *= inv_sqrt_dh;
            softmax_rows(scores);
            if (trace) {
                trace->attn_probs.back().push_back(scores);
            }
            const Matrix head_out = scores * xv; // n x d_head
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < cfg.d_head; ++j) {
                    concat(i, h * cfg.d_head + j) = head_out(i, j);
                }
            }
        }
        if (trace) {
            trace->attn_concat.push_back(concat);
        }
        Matrix attn_out(n, cfg.d_model);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const Matrix& w_o = block.attn.heads[h].w_o; // d_model x d_head
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < cfg.d_model; ++j) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < cfg.d_head; ++k) {
                        acc += concat(i, h * cfg.d_head + k) * w_o(j, k);
                    }
                    attn_out(i, j) += acc;
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < cfg.d_model; ++j) {
                attn_out(i, j) += block.attn.b_o(0, j) + x(i, j);
            }
        }
        x = layer_norm_rows(attn_out, block.attn.ln_gain, block.attn.ln_bias);

        if (trace) {
            trace->ffn_in.push_back(x);
        }
        Matrix hidden = affine(x, block.ffn.w_i, block.ffn.b_i);
        for (double& v : hidden.data()) {
            v = std::max(v, 0.0);
        }
        if (trace) {
            trace->ffn_hidden.push_back(hidden);
        }
        Matrix ffn_out = affine(hidden, block.ffn.w_o, block.ffn.b_o);
        ffn_out += x;
        x = layer_norm_rows(ffn_out, block.ffn.ln_gain, block.ffn.ln_bias);
    }

    Matrix pooled(1, cfg.d_model);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
            pooled(0, j) += x(i, j);
        }
    }
    pooled *= 1.0 / static_cast<double>(n);
    if (trace) {
        trace->pooled = pooled;
    }
    return affine(pooled, model.classifier_w, model.classifier_b);
}

double item_loss(const TransformerModel& model, const DatasetItem& item) {
    if (item.label >= model.config.n_classes) {
        throw ValueError("loss: label " + std::to_string(item.label) + " out of range");
    }
    const Matrix logits = forward(model, item.tokens);
    return log_sum_exp_row(logits) - logits(0, item.label);
}

double loss(const TransformerModel& model, const SyntheticDataset& dataset) {
    if (dataset.items.empty()) {
        throw ValueError("loss: dataset is empty");
    }
    double total = 0.0;
    for (const DatasetItem& item : dataset.items) {
        total += item_loss(model, item);
    }
    return total / static_cast<double>(dataset.items.size());
}

double accuracy(const TransformerModel& model, const SyntheticDataset& dataset) {
    if (dataset.items.empty()) {
        throw ValueError("accuracy: dataset is empty");
    }
    std::size_t hits = 0;
    for (const DatasetItem& item : dataset.items) {
        const Matrix logits = forward(model, item.tokens);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (logits(0, j) > logits(0, arg)) {
                arg = j;
            }
        }
        hits += (arg == item.label) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.items.size());
}

TransformerModel random_model(const TransformerConfig& config, std::uint64_t seed, double scale) {
    config.validate();
    if (scale < 0.0 || !std::isfinite(scale)) {
        throw ValueError("random_model: scale must be finite and >= 0");
    }
    Rng rng(seed);
    const auto fill_normal = [&](Matrix& m) {
        for (double& v : m.data()) {
            v = rng.normal() * scale;
        }
    };
    const auto ones = [](std::size_t n) {
        Matrix m(1, n);
        for (double& v : m.data()) {
            v = 1.0;
        }
        return m;
    };

    TransformerModel m;
    m.config = config;
    m.embedding = Matrix(config.vocab_size, config.d_model);
    fill_normal(m.embedding);
    m.blocks.resize(config.n_layers);
    for (TransformerBlock& block : m.blocks) {
        block.attn.heads.resize(config.n_heads);
        for (AttentionHeadParams& head : block.attn.heads) {
            head.w_q = Matrix(config.d_head, config.d_model);
            head.b_q = Matrix(1, config.d_head);
            head.w_k = Matrix(config.d_head, config.d_model);
            head.b_k = Matrix(1, config.d_head);
            head.w_v = Matrix(config.d_head, config.d_model);
            head.b_v = Matrix(1, config.d_head);
            head.w_o = Matrix(config.d_model, config.d_head);
            fill_normal(head.w_q);
            fill_normal(head.b_q);
            fill_normal(head.w_k);
            fill_normal(head.b_k);
            fill_normal(head.w_v);
            fill_normal(head.b_v);
            fill_normal(head.w_o);
        }
        block.attn.b_o = Matrix(1, config.d_model);
        fill_normal(block.attn.b_o);
        block.attn.ln_gain = ones(config.d_model);
        block.attn.ln_bias = Matrix(1, config.d_model);
        block.ffn.w_i = Matrix(config.d_ff, config.d_model);
        block.ffn.b_i = Matrix(1, config.d_ff);
        block.ffn.w_o = Matrix(config.d_model, config.d_ff);
        block.ffn.b_o = Matrix(1, config.d_model);
        fill_normal(block.ffn.w_i);
        fill_normal(block.ffn.b_i);
        fill_normal(block.ffn.w_o);
        fill_normal(block.ffn.b_o);
        block.ffn.ln_gain = ones(config.d_model);
        block.ffn.ln_bias = Matrix(1, config.d_model);
    }
    m.classifier_w = Matrix(config.n_classes, config.d_model);
    m.classifier_b = Matrix(1, config.n_classes);
    fill_normal(m.classifier_w);
    fill_normal(m.classifier_b);
    return m;
}

TransformerModel add_noise(const TransformerModel& model, double sigma, std::uint64_t seed) {
    if (sigma < 0.0 || !std::isfinite(sigma)) {
        throw ValueError("add_noise: sigma must be finite and >= 0");
    }
    TransformerModel out = model;
    Rng rng(seed);
    for_each_tensor(out, [&](const std::string&, Matrix& t) {
        for (double& v : t.data()) {
            v += rng.normal() * sigma;
        }
    });
    return out;
}

SyntheticDataset gen_synthetic(const TransformerConfig& config, const TransformerModel& teacher,
                               std::size_t n_items, std::uint64_t seed) {
    config.validate();
    if (!(config == teacher.config)) {
        throw ConfigError("gen_synthetic: teacher config differs from requested config");
    }
    if (n_items == 0) {
        throw ValueError("gen_synthetic: n_items must be >= 1");
    }
    Rng rng(seed);
    SyntheticDataset ds;
    ds.seed = seed;
    ds.seq_len = config.seq_len;
    ds.vocab_size = config.vocab_size;
    ds.n_classes = config.n_classes;
    ds.items.resize(n_items);
    for (DatasetItem& item : ds.items) {
        item.tokens.resize(config.seq_len);
        for (std::size_t& t : item.tokens) {
            t = static_cast<std::size_t>(rng.below(config.vocab_size));
        }
        const Matrix logits = forward(teacher, item.tokens);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (logits(0, j) > logits(0, arg)) {
                arg = j;
            }
        }
        item.label = arg;
    }
    return ds;
}

std::map<std::string, ActivationRecord> capture_activations(const TransformerModel& model,
                                                            const SyntheticDataset& dataset) {
    if (dataset.items.empty()) {
        throw ValueError("capture_activations: dataset is empty");
    }
    std::map<std::string, ActivationRecord> records;
    const auto accumulate = [&](const std::string& name, const Matrix& x) {
        ActivationRecord& rec = records[name];
        if (rec.gram.empty()) {
            rec.gram = Matrix(x.cols(), x.cols());
        }
        rec.gram += matmul_tn(x, x);
        rec.samples += x.rows();
    };
    for (const DatasetItem& item : dataset.items) {
        ForwardTrace trace;
        forward(model, item.tokens, &trace);
        for (std::size_t l = 0; l < model.config.n_layers; ++l) {
            const std::string at = "layer." + std::to_string(l);
            accumulate(at + ".attn.in", trace.attn_in[l]);
            accumulate(at + ".attn.concat", trace.attn_concat[l]);
            accumulate(at + ".ffn.in", trace.ffn_in[l]);
            accumulate(at + ".ffn.hidden", trace.ffn_hidden[l]);
        }
        accumulate("classifier.in", trace.pooled);
    }
    return records;
}

std::vector<double> fd_gradient(const TransformerModel& model, const DatasetItem& item,
                                double base_step) {
    if (!(base_step > 0.0) || !std::isfinite(base_step)) {
        throw ValueError("fd_gradient: step must be finite and > 0");
    }
    TransformerModel work = model;
    std::vector<double*> params;
    params.reserve(parameter_count(work));
    for_each_tensor(work, [&](const std::string&, Matrix& t) {
        for (double& v : t.data()) {
            params.push_back(&v);
        }
    });
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& p = *params[i];
        const double orig = p;
        const double h = base_step * (1.0 + std::abs(orig));
        p = orig + h;
        const double up = item_loss(work, item);
        p = orig - h;
        const double down = item_loss(work, item);
        p = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("fd_gradient: non-finite loss during perturbation");
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

namespace {

template <typename Model, typename Fn>
void walk_tensors(Model& m, const Fn& f) {
    f("embedding", m.embedding);
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const std::string at = "layer." + std::to_string(l);
        auto& attn = m.blocks[l].attn;
        for (std::size_t h = 0; h < attn.heads.size(); ++h) {
            const std::string hn = at + ".attn.head." + std::to_string(h);
            auto& head = attn.heads[h];
            f(hn + ".wq", head.w_q);
            f(hn + ".bq", head.b_q);
            f(hn + ".wk", head.w_k);
            f(hn + ".bk", head.b_k);
            f(hn + ".wv", head.w_v);
            f(hn + ".bv", head.b_v);
            f(hn + ".wo", head.w_o);
        }
        f(at + ".attn.bo", attn.b_o);
        f(at + ".attn.ln_gain", attn.ln_gain);
        f(at + ".attn.ln_bias", attn.ln_bias);
        auto& ffn = m.blocks[l].ffn;
        f(at + ".ffn.wi", ffn.w_i);
        f(at + ".ffn.bi", ffn.b_i);
        f(at + ".ffn.wo", ffn.w_o);
        f(at + ".ffn.bo", ffn.b_o);
        f(at + ".ffn.ln_gain", ffn.ln_gain);
        f(at + ".ffn.ln_bias", ffn.ln_bias);
    }
    f("classifier.w", m.classifier_w);
    f("classifier.b", m.classifier_b);
}

} // namespace

void for_each_tensor(TransformerModel& m,
                     const std::function<void(const std::string&, Matrix&)>& f) {
    walk_tensors(m, f);
}

void for_each_tensor(const TransformerModel& m,
                     const std::function<void(const std::string&, const Matrix&)>& f) {
    walk_tensors(m, f);
}

std::size_t parameter_count(const TransformerModel& m) {
    std::size_t n = 0;
    for_each_tensor(m, [&](const std::string&, const Matrix& t) { n += t.size(); });
    return n;
}

std::vector<double> flatten(const TransformerModel& m) {
    std::vector<double> theta;
    theta.reserve(parameter_count(m));
    for_each_tensor(m, [&](const std::string&, const Matrix& t) {
        theta.insert(theta.end(), t.data().begin(), t.data().end());
    });
    return theta;
}

void unflatten_into(TransformerModel& m, std::span<const double> theta) {
    if (theta.size() != parameter_count(m)) {
        throw DimensionError("unflatten: expected " + std::to_string(parameter_count(m)) +
                             " values, got " + std::to_string(theta.size()));
    }
    std::size_t pos = 0;
    for_each_tensor(m, [&](const std::string&, Matrix& t) {
        std::copy(theta.begin() + static_cast<std::ptrdiff_t>(pos),
                  theta.begin() + static_cast<std::ptrdiff_t>(pos + t.size()), t.data().begin());
        pos += t.size();
    });
}

} // namespace rotsym
