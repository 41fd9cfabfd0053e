#include "rotsym/persistence.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "json.hpp"

#include "rotsym/errors.hpp"

namespace rotsym {

namespace {

constexpr char kModelMagic[] = "RSYM1";
constexpr char kDatasetMagic[] = "RSDS1";

const char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += kB64Alphabet[(v >> 6) & 63];
        out += kB64Alphabet[v & 63];
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t v = bytes[i] << 16;
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += kB64Alphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::array<int, 256> table;
    table.fill(-1);
    for (int i = 0; i < 64; ++i) {
        table[static_cast<unsigned char>(kB64Alphabet[i])] = i;
    }
    if (text.size() % 4 != 0) {
        throw FormatError("base64: length not a multiple of 4");
    }
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                vals[k] = 0;
                ++pad;
            } else {
                vals[k] = table[static_cast<unsigned char>(c)];
                if (vals[k] < 0) {
                    throw FormatError("base64: invalid character");
                }
                if (pad > 0) {
                    throw FormatError("base64: data after padding");
                }
            }
        }
        const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
        out.push_back((v >> 16) & 0xff);
        if (pad < 2) {
            out.push_back((v >> 8) & 0xff);
        }
        if (pad < 1) {
            out.push_back(v & 0xff);
        }
    }
    return out;
}

std::string encode_payload(const Matrix& m) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(m.size() * 8);
    for (double v : m.data()) {
        const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
        for (int shift = 0; shift < 64; shift += 8) {
            bytes.push_back(static_cast<std::uint8_t>((u >> shift) & 0xff));
        }
    }
    return base64_encode(bytes);
}

void decode_payload(const std::string& text, Matrix& m, const std::string& name) {
    const std::vector<std::uint8_t> bytes = base64_decode(text);
    if (bytes.size() != m.size() * 8) {
        throw IntegrityError("tensor " + name + ": payload holds " +
                             std::to_string(bytes.size() / 8) + " values, expected " +
                             std::to_string(m.size()));
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) {
            u |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        }
        m.data()[i] = std::bit_cast<double>(u);
    }
    if (!m.all_finite()) {
        throw ValueError("tensor " + name + ": payload has non-finite values");
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path + " for reading");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (in.bad()) {
        throw IoError("read failed for " + path);
    }
    return buffer.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string current;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    if (!current.empty()) {
        lines.push_back(current);
    }
    return lines;
}

void check_magic(const std::vector<std::string>& lines, const std::string& magic,
                 const char* kind) {
    if (lines.empty()) {
        throw FormatError(std::string(kind) + ": empty file");
    }
    if (lines[0] == magic) {
        return;
    }
    // Same family, different version tag (e.g. RSYM2): reject as unsupported.
    const std::string family = magic.substr(0, magic.size() - 1);
    if (lines[0].size() > family.size() && lines[0].compare(0, family.size(), family) == 0) {
        throw FormatError(std::string(kind) + ": unsupported version \"" + lines[0] + "\"");
    }
    throw FormatError(std::string(kind) + ": bad magic \"" + lines[0] + "\", expected " + magic);
}

std::map<std::string, std::string> parse_kv(const std::string& line, std::size_t skip_words,
                                            const char* what) {
    std::istringstream in(line);
    std::string word;
    for (std::size_t i = 0; i < skip_words; ++i) {
        in >> word;
    }
    std::map<std::string, std::string> kv;
    while (in >> word) {
        const std::size_t eq = word.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw FormatError(std::string(what) + ": malformed key=value token \"" + word + "\"");
        }
        const std::string key = word.substr(0, eq);
        if (kv.count(key)) {
            throw FormatError(std::string(what) + ": duplicate key " + key);
        }
        kv[key] = word.substr(eq + 1);
    }
    return kv;
}

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key,
                        const char* what) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw FormatError(std::string(what) + ": missing key " + key);
    }
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) {
            throw std::invalid_argument("trailing");
        }
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw FormatError(std::string(what) + ": invalid count for " + key + ": \"" + it->second +
                          "\"");
    }
}

} // namespace

std::string model_to_string(const TransformerModel& model) {
    model.validate();
    std::string out = kModelMagic;
    out += '\n';
    const TransformerConfig& c = model.config;
    out += "config n_layers=" + std::to_string(c.n_layers) + " n_heads=" +
           std::to_string(c.n_heads) + " d_model=" + std::to_string(c.d_model) + " d_head=" +
           std::to_string(c.d_head) + " d_ff=" + std::to_string(c.d_ff) + " vocab_size=" +
           std::to_string(c.vocab_size) + " n_classes=" + std::to_string(c.n_classes) +
           " seq_len=" + std::to_string(c.seq_len) + "\n";
    for_each_tensor(model, [&](const std::string& name, const Matrix& t) {
        out += "tensor " + name + " " + std::to_string(t.rows()) + " " + std::to_string(t.cols()) +
               "\n";
        out += encode_payload(t);
        out += '\n';
    });
    out += "end\n";
    return out;
}

TransformerModel model_from_string(const std::string& text) {
    const std::vector<std::string> lines = split_lines(text);
    check_magic(lines, kModelMagic, "model");
    if (lines.size() < 2 || lines[1].rfind("config ", 0) != 0) {
        throw FormatError("model: missing config line");
    }
    const auto kv = parse_kv(lines[1], 1, "model config");
    TransformerConfig cfg;
    cfg.n_layers = parse_count(kv, "n_layers", "model config");
    cfg.n_heads = parse_count(kv, "n_heads", "model config");
    cfg.d_model = parse_count(kv, "d_model", "model config");
    cfg.d_head = parse_count(kv, "d_head", "model config");
    cfg.d_ff = parse_count(kv, "d_ff", "model config");
    cfg.vocab_size = parse_count(kv, "vocab_size", "model config");
    cfg.n_classes = parse_count(kv, "n_classes", "model config");
    cfg.seq_len = parse_count(kv, "seq_len", "model config");
    if (kv.size() != 8) {
        throw FormatError("model config: unexpected extra keys");
    }
    cfg.validate();

    // Build the expected skeleton, then fill tensors by name.
    TransformerModel model = random_model(cfg, 0, 0.0);
    std::map<std::string, Matrix*> slots;
    for_each_tensor(model,
                    [&](const std::string& name, Matrix& t) { slots.emplace(name, &t); });

    std::map<std::string, bool> seen;
    std::size_t i = 2;
    bool closed = false;
    while (i < lines.size()) {
        const std::string& line = lines[i];
        if (line == "end") {
            closed = true;
            ++i;
            break;
        }
        std::istringstream in(line);
        std::string word, name;
        std::size_t rows = 0, cols = 0;
        in >> word >> name >> rows >> cols;
        if (word != "tensor" || in.fail() || name.empty()) {
            throw FormatError("model: malformed tensor line \"" + line + "\"");
        }
        const auto slot = slots.find(name);
        if (slot == slots.end()) {
            throw IntegrityError("model: unknown tensor " + name);
        }
        if (seen.count(name)) {
            throw IntegrityError("model: duplicate tensor " + name);
        }
        if (rows != slot->second->rows() || cols != slot->second->cols()) {
            throw IntegrityError("model: tensor " + name + " declares " + std::to_string(rows) +
                                 "x" + std::to_string(cols) + ", config requires " +
                                 std::to_string(slot->second->rows()) + "x" +
                                 std::to_string(slot->second->cols()));
        }
        if (i + 1 >= lines.size()) {
            throw IntegrityError("model: truncated file, missing payload for " + name);
        }
        decode_payload(lines[i + 1], *slot->second, name);
        seen[name] = true;
        i += 2;
    }
    if (!closed) {
        throw IntegrityError("model: truncated file, missing end marker");
    }
    if (i != lines.size()) {
        throw FormatError("model: trailing data after end marker");
    }
    if (seen.size() != slots.size()) {
        for (const auto& [name, _] : slots) {
            if (!seen.count(name)) {
                throw IntegrityError("model: missing tensor " + name);
            }
        }
    }
    return model;
}

void save_model(const TransformerModel& model, const std::string& path) {
    write_file(path, model_to_string(model));
}

TransformerModel load_model(const std::string& path) {
    return model_from_string(read_file(path));
}

std::string dataset_to_string(const SyntheticDataset& dataset) {
    std::string out = kDatasetMagic;
    out += '\n';
    out += "meta seed=" + std::to_string(dataset.seed) + " n_items=" +
           std::to_string(dataset.items.size()) + " seq_len=" + std::to_string(dataset.seq_len) +
           " vocab_size=" + std::to_string(dataset.vocab_size) + " n_classes=" +
           std::to_string(dataset.n_classes) + "\n";
    for (const DatasetItem& item : dataset.items) {
        if (item.tokens.size() != dataset.seq_len) {
            throw DimensionError("dataset: item token count differs from seq_len");
        }
        if (item.label >= dataset.n_classes) {
            throw ValueError("dataset: label out of range");
        }
        out += "item " + std::to_string(item.label);
        for (std::size_t t : item.tokens) {
            if (t >= dataset.vocab_size) {
                throw ValueError("dataset: token out of range");
            }
            out += ' ';
            out += std::to_string(t);
        }
        out += '\n';
    }
    out += "end\n";
    return out;
}

SyntheticDataset dataset_from_string(const std::string& text) {
    const std::vector<std::string> lines = split_lines(text);
    check_magic(lines, kDatasetMagic, "dataset");
    if (lines.size() < 2 || lines[1].rfind("meta ", 0) != 0) {
        throw FormatError("dataset: missing meta line");
    }
    const auto kv = parse_kv(lines[1], 1, "dataset meta");
    SyntheticDataset ds;
    ds.seed = parse_count(kv, "seed", "dataset meta");
    const std::size_t n_items = parse_count(kv, "n_items", "dataset meta");
    ds.seq_len = parse_count(kv, "seq_len", "dataset meta");
    ds.vocab_size = parse_count(kv, "vocab_size", "dataset meta");
    ds.n_classes = parse_count(kv, "n_classes", "dataset meta");
    if (ds.seq_len == 0 || ds.vocab_size == 0 || ds.n_classes == 0) {
        throw FormatError("dataset meta: zero-sized field");
    }

    std::size_t i = 2;
    bool closed = false;
    while (i < lines.size()) {
        const std::string& line = lines[i];
        if (line == "end") {
            closed = true;
            ++i;
            break;
        }
        std::istringstream in(line);
        std::string word;
        in >> word;
        if (word != "item") {
            throw FormatError("dataset: malformed item line \"" + line + "\"");
        }
        DatasetItem item;
        if (!(in >> item.label)) {
            throw FormatError("dataset: missing label in \"" + line + "\"");
        }
        std::size_t token = 0;
        while (in >> token) {
            item.tokens.push_back(token);
        }
        if (!in.eof()) {
            throw FormatError("dataset: non-numeric token in \"" + line + "\"");
        }
        if (item.tokens.size() != ds.seq_len) {
            throw IntegrityError("dataset: item has " + std::to_string(item.tokens.size()) +
                                 " tokens, meta declares " + std::to_string(ds.seq_len));
        }
        if (item.label >= ds.n_classes) {
            throw IntegrityError("dataset: label " + std::to_string(item.label) +
                                 " out of range");
        }
        for (std::size_t t : item.tokens) {
            if (t >= ds.vocab_size) {
                throw IntegrityError("dataset: token " + std::to_string(t) + " out of range");
            }
        }
        ds.items.push_back(std::move(item));
        ++i;
    }
    if (!closed) {
        throw IntegrityError("dataset: truncated file, missing end marker");
    }
    if (i != lines.size()) {
        throw FormatError("dataset: trailing data after end marker");
    }
    if (ds.items.size() != n_items) {
        throw IntegrityError("dataset: meta declares " + std::to_string(n_items) +
                             " items, found " + std::to_string(ds.items.size()));
    }
    return ds;
}

void save_dataset(const SyntheticDataset& dataset, const std::string& path) {
    write_file(path, dataset_to_string(dataset));
}

SyntheticDataset load_dataset(const std::string& path) {
    return dataset_from_string(read_file(path));
}

std::string match_report_to_json(const MatchReport& report) {
    nlohmann::ordered_json j;
    j["kind"] = "match_report";
    j["distance_before"] = report.distance_before;
    j["distance_after"] = report.distance_after;
    j["rescale_fallbacks"] = report.rescale_fallbacks;
    j["layers"] = nlohmann::ordered_json::array();
    for (std::size_t l = 0; l < report.layers.size(); ++l) {
        const LayerObjectives& e = report.layers[l];
        nlohmann::ordered_json entry;
        entry["layer"] = l;
        entry["selected"] = e.selected;
        entry["ffn_before"] = e.ffn_before;
        entry["ffn_after"] = e.ffn_after;
        entry["attn_before"] = e.attn_before;
        entry["attn_after"] = e.attn_after;
        entry["rescale_before"] = e.rescale_before;
        entry["rescale_after"] = e.rescale_after;
        j["layers"].push_back(std::move(entry));
    }
    j["transform"] = nlohmann::ordered_json::array();
    for (const LayerTransform& layer : report.transform.layers) {
        nlohmann::ordered_json lt;
        lt["ffn_perm"] = layer.ffn_perm.map;
        lt["heads"] = nlohmann::ordered_json::array();
        for (const HeadTransform& head : layer.heads) {
            nlohmann::ordered_json ht;
            ht["a_qk"] = head.a_qk;
            ht["a_vo"] = head.a_vo;
            auto rows_of = [](const Matrix& m) {
                nlohmann::ordered_json rows = nlohmann::ordered_json::array();
                for (std::size_t i = 0; i < m.rows(); ++i) {
                    nlohmann::ordered_json row = nlohmann::ordered_json::array();
                    for (std::size_t jj = 0; jj < m.cols(); ++jj) {
                        row.push_back(m(i, jj));
                    }
                    rows.push_back(std::move(row));
                }
                return rows;
            };
            ht["r_qk"] = rows_of(head.r_qk);
            ht["r_vo"] = rows_of(head.r_vo);
            lt["heads"].push_back(std::move(ht));
        }
        j["transform"].push_back(std::move(lt));
    }
    return j.dump(2) + "\n";
}

void save_match_report(const MatchReport& report, const std::string& path) {
    write_file(path, match_report_to_json(report));
}

void save_loss_curve(const LossCurve& curve, const std::string& path) {
    write_file(path, loss_curve_csv(curve));
}

} // namespace rotsym
