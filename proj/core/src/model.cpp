#include "jachess/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "jachess/rng.hpp"

namespace jachess::model {

void ModelConfig::validate() const {
    if (vocab_size <= kNumSpecialTokens)
        throw ConfigError("model: vocab_size must exceed the " + std::to_string(kNumSpecialTokens) +
                          " special tokens, got " + std::to_string(vocab_size));
    if (embed_dim <= 0 || num_heads <= 0 || feedforward_dim <= 0 || max_seq_len <= 0)
        throw ConfigError("model: dimensions must be positive");
    if (num_layers < 1) throw ConfigError("model: num_layers must be >= 1, got " + std::to_string(num_layers));
    if (embed_dim % num_heads != 0)
        throw ConfigError("model: embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                          std::to_string(num_heads));
    if (task_head == TaskHead::kClassification && num_classes < 2)
        throw ConfigError("model: classification needs at least 2 classes");
}

const Shape& Checkpoint::param_shape(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return shapes_[i];
    throw RunError("checkpoint: unknown parameter '" + name + "'");
}

const std::shared_ptr<std::vector<double>>& Checkpoint::param_values(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return buffers_[i];
    throw RunError("checkpoint: unknown parameter '" + name + "'");
}

std::int64_t Checkpoint::total_params() const {
    std::int64_t total = 0;
    for (const auto& b : buffers_) total += static_cast<std::int64_t>(b->size());
    return total;
}

Checkpoint Checkpoint::clone() const {
    Checkpoint out;
    out.config_ = config_;
    out.step_ = step_;
    out.names_ = names_;
    out.shapes_ = shapes_;
    out.buffers_.reserve(buffers_.size());
    for (const auto& b : buffers_) out.buffers_.push_back(std::make_shared<std::vector<double>>(*b));
    return out;
}

void Checkpoint::add_param(const std::string& name, Shape shape, std::vector<double> values) {
    names_.push_back(name);
    shapes_.push_back(std::move(shape));
    buffers_.push_back(std::make_shared<std::vector<double>>(std::move(values)));
}

namespace {

constexpr double kInitStd = 0.08;

std::vector<double> gaussian_init(Rng& rng, std::int64_t n, double std_dev) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& v : out) v = rng.gaussian() * std_dev;
    return out;
}

}  // namespace

Checkpoint init_model(const ModelConfig& config) {
    config.validate();
    Checkpoint ckpt;
    ckpt.config_ = config;
    Rng rng = Rng::derive(config.seed, {0x6a636873ULL});  // model-init stream

    const int d = config.embed_dim;
    const int ff = config.feedforward_dim;

    auto weight = [&](const std::string& name, int rows, int cols) {
        ckpt.add_param(name, {rows, cols}, gaussian_init(rng, static_cast<std::int64_t>(rows) * cols, kInitStd));
    };
    auto zeros = [&](const std::string& name, int rows, int cols) {
        ckpt.add_param(name, {rows, cols}, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0));
    };
    auto ones = [&](const std::string& name, int rows, int cols) {
        ckpt.add_param(name, {rows, cols}, std::vector<double>(static_cast<std::size_t>(rows) * cols, 1.0));
    };

    weight("tok_embed", config.vocab_size, d);
    weight("pos_embed", config.max_seq_len, d);
    for (int k = 0; k < config.num_layers; ++k) {
        const std::string p = "blk" + std::to_string(k) + ".";
        ones(p + "ln1.g", 1, d);
        zeros(p + "ln1.b", 1, d);
        weight(p + "attn.wq", d, d);
        weight(p + "attn.wk", d, d);
        weight(p + "attn.wv", d, d);
        weight(p + "attn.wo", d, d);
        ones(p + "ln2.g", 1, d);
        zeros(p + "ln2.b", 1, d);
        weight(p + "ff.w1", d, ff);
        zeros(p + "ff.b1", 1, ff);
        weight(p + "ff.w2", ff, d);
        zeros(p + "ff.b2", 1, d);
    }
    ones("lnf.g", 1, d);
    zeros("lnf.b", 1, d);
    weight("head.w", d, config.output_dim());
    zeros("head.b", 1, config.output_dim());
    return ckpt;
}

int last_non_pad_index(std::span<const int> tokens) {
    for (int i = static_cast<int>(tokens.size()) - 1; i >= 0; --i)
        if (tokens[static_cast<std::size_t>(i)] != kPadToken) return i;
    throw ShapeError("forward: sequence contains no non-pad tokens");
}

std::vector<int> join_pair(std::span<const int> tokens_a, std::span<const int> tokens_b) {
    std::vector<int> joined;
    joined.reserve(tokens_a.size() + tokens_b.size() + 1);
    joined.insert(joined.end(), tokens_a.begin(), tokens_a.end());
    joined.push_back(kEosToken);
    joined.insert(joined.end(), tokens_b.begin(), tokens_b.end());
    return joined;
}

ModelBinding::ModelBinding(Graph& graph, const Checkpoint& ckpt) : graph_(&graph), config_(ckpt.config()) {
    config_.validate();
    leaves_.reserve(ckpt.param_names().size());
    for (const auto& name : ckpt.param_names())
        leaves_.emplace_back(name, graph.leaf_shared(ckpt.param_shape(name), ckpt.param_values(name), true));
}

const Tensor& ModelBinding::param(const std::string& name) const {
    for (const auto& [n, t] : leaves_)
        if (n == name) return t;
    throw RunError("binding: unknown parameter '" + name + "'");
}

ForwardTrace ModelBinding::forward(std::span<const int> tokens) const {
    if (tokens.empty()) throw ShapeError("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > config_.max_seq_len)
        throw ShapeError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                         std::to_string(config_.max_seq_len));
    std::vector<int> ids(tokens.begin(), tokens.end());
    for (int t : ids)
        if (t < 0 || t >= config_.vocab_size)
            throw ShapeError("forward: token " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(config_.vocab_size));
    const Tensor x = ops::gather_rows(param("tok_embed"), ids);
    return run(tokens, x);
}

ForwardTrace ModelBinding::pair_forward(std::span<const int> tokens_a, std::span<const int> tokens_b) const {
    const std::vector<int> joined = join_pair(tokens_a, tokens_b);
    if (static_cast<int>(joined.size()) > config_.max_seq_len)
        throw ShapeError("pair_forward: combined length " + std::to_string(joined.size()) +
                         " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    return forward(joined);
}

ForwardTrace ModelBinding::forward_with_embeddings(std::span<const int> tokens,
                                                   const std::vector<double>& embeddings) const {
    const int seq = static_cast<int>(tokens.size());
    if (static_cast<std::int64_t>(embeddings.size()) != static_cast<std::int64_t>(seq) * config_.embed_dim)
        throw ShapeError("forward: embedding buffer size does not match seq_len x embed_dim");
    const Tensor x = graph_->leaf({seq, config_.embed_dim}, embeddings, true);
    return run(tokens, x);
}

ForwardTrace ModelBinding::run(std::span<const int> tokens, const Tensor& x) const {
    Graph& g = *graph_;
    const int seq = static_cast<int>(tokens.size());
    const int d = config_.embed_dim;
    const int heads = config_.num_heads;
    const int hd = config_.head_dim();
    const int last = last_non_pad_index(tokens);

    // Additive attention mask: causal, and pad positions excluded as keys.
    std::vector<double> mask(static_cast<std::size_t>(seq) * seq, 0.0);
    for (int i = 0; i < seq; ++i)
        for (int j = 0; j < seq; ++j)
            if (j > i || tokens[static_cast<std::size_t>(j)] == kPadToken)
                mask[static_cast<std::size_t>(i) * seq + j] = -1e9;
    const Tensor mask_t = g.constant({seq, seq}, std::move(mask));

    const Tensor pos = ops::slice(param("pos_embed"), 0, seq, 0, d);
    Tensor h = ops::add(x, pos);

    ForwardTrace trace;
    trace.x = x;
    trace.seq_len = seq;
    trace.last_index = last;
    trace.graph = &g;

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int k = 0; k < config_.num_layers; ++k) {
        const std::string p = "blk" + std::to_string(k) + ".";
        const Tensor a1 = ops::add(ops::mul(ops::layer_norm(h), param(p + "ln1.g")), param(p + "ln1.b"));
        const Tensor q = ops::matmul(a1, param(p + "attn.wq"));
        const Tensor kk = ops::matmul(a1, param(p + "attn.wk"));
        const Tensor v = ops::matmul(a1, param(p + "attn.wv"));
        std::vector<Tensor> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (int hi = 0; hi < heads; ++hi) {
            const Tensor qh = ops::slice(q, 0, seq, hi * hd, hd);
            const Tensor kh = ops::slice(kk, 0, seq, hi * hd, hd);
            const Tensor vh = ops::slice(v, 0, seq, hi * hd, hd);
            const Tensor scores = ops::add(ops::scale(ops::matmul(qh, ops::transpose(kh)), scale), mask_t);
            head_outs.push_back(ops::matmul(ops::softmax(scores), vh));
        }
        const Tensor attn = ops::matmul(ops::concat(head_outs, 1), param(p + "attn.wo"));
        h = ops::add(h, attn);
        const Tensor a2 = ops::add(ops::mul(ops::layer_norm(h), param(p + "ln2.g")), param(p + "ln2.b"));
        const Tensor f1 = ops::gelu(ops::add(ops::matmul(a2, param(p + "ff.w1")), param(p + "ff.b1")));
        const Tensor f2 = ops::add(ops::matmul(f1, param(p + "ff.w2")), param(p + "ff.b2"));
        h = ops::add(h, f2);
        trace.layers.push_back(ops::reshape(ops::slice(h, last, 1, 0, d), {d}));
    }

    const Tensor hf = ops::add(ops::mul(ops::layer_norm(h), param("lnf.g")), param("lnf.b"));
    const Tensor pooled = ops::slice(hf, last, 1, 0, d);
    const int out_dim = config_.output_dim();
    trace.logits = ops::reshape(ops::add(ops::matmul(pooled, param("head.w")), param("head.b")), {out_dim});
    if (config_.task_head == TaskHead::kClassification) trace.probs = ops::softmax(trace.logits).values();
    return trace;
}

OwnedForward forward(const Checkpoint& ckpt, std::span<const int> tokens, bool second_order) {
    OwnedForward out;
    out.graph = std::make_unique<Graph>();
    if (second_order) out.graph->enable_gradient_recording();
    out.binding = std::make_unique<ModelBinding>(*out.graph, ckpt);
    out.trace = out.binding->forward(tokens);
    return out;
}

OwnedForward pair_forward(const Checkpoint& ckpt, std::span<const int> tokens_a, std::span<const int> tokens_b,
                          bool second_order) {
    OwnedForward out;
    out.graph = std::make_unique<Graph>();
    if (second_order) out.graph->enable_gradient_recording();
    out.binding = std::make_unique<ModelBinding>(*out.graph, ckpt);
    out.trace = out.binding->pair_forward(tokens_a, tokens_b);
    return out;
}

namespace {

constexpr char kMagic[4] = {'J', 'H', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw RunError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RunError("checkpoint: cannot open '" + path.string() + "' for writing");
    os.write(kMagic, 4);
    write_pod(os, kFormatVersion);
    const ModelConfig& c = ckpt.config();
    write_pod(os, static_cast<std::int32_t>(c.vocab_size));
    write_pod(os, static_cast<std::int32_t>(c.embed_dim));
    write_pod(os, static_cast<std::int32_t>(c.num_layers));
    write_pod(os, static_cast<std::int32_t>(c.num_heads));
    write_pod(os, static_cast<std::int32_t>(c.feedforward_dim));
    write_pod(os, static_cast<std::int32_t>(c.max_seq_len));
    write_pod(os, static_cast<std::uint8_t>(c.task_head == TaskHead::kRegression ? 1 : 0));
    write_pod(os, static_cast<std::int32_t>(c.num_classes));
    write_pod(os, static_cast<std::uint64_t>(c.seed));
    write_pod(os, ckpt.step());
    write_pod(os, static_cast<std::uint32_t>(ckpt.param_names().size()));
    for (const auto& name : ckpt.param_names()) {
        write_pod(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape& shape = ckpt.param_shape(name);
        write_pod(os, static_cast<std::uint8_t>(shape.size()));
        for (int dim : shape) write_pod(os, static_cast<std::int64_t>(dim));
        const auto& vals = *ckpt.param_values(name);
        write_pod(os, static_cast<std::uint64_t>(vals.size()));
        os.write(reinterpret_cast<const char*>(vals.data()),
                 static_cast<std::streamsize>(vals.size() * sizeof(double)));
    }
    if (!os) throw RunError("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RunError("checkpoint: cannot open '" + path.string() + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw RunError("checkpoint: '" + path.string() + "' is not a checkpoint file");
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kFormatVersion)
        throw RunError("checkpoint: unsupported format version " + std::to_string(version));
    Checkpoint ckpt;
    ModelConfig c;
    c.vocab_size = read_pod<std::int32_t>(is);
    c.embed_dim = read_pod<std::int32_t>(is);
    c.num_layers = read_pod<std::int32_t>(is);
    c.num_heads = read_pod<std::int32_t>(is);
    c.feedforward_dim = read_pod<std::int32_t>(is);
    c.max_seq_len = read_pod<std::int32_t>(is);
    c.task_head = read_pod<std::uint8_t>(is) == 1 ? TaskHead::kRegression : TaskHead::kClassification;
    c.num_classes = read_pod<std::int32_t>(is);
    c.seed = read_pod<std::uint64_t>(is);
    ckpt.config_ = c;
    ckpt.step_ = read_pod<std::uint64_t>(is);
    const auto count = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rank = read_pod<std::uint8_t>(is);
        Shape shape(rank);
        for (auto& dim : shape) dim = static_cast<int>(read_pod<std::int64_t>(is));
        const auto n = read_pod<std::uint64_t>(is);
        std::vector<double> vals(n);
        is.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw RunError("checkpoint: truncated parameter data in '" + path.string() + "'");
        ckpt.add_param(name, std::move(shape), std::move(vals));
    }
    return ckpt;
}

}  // namespace jachess::model
