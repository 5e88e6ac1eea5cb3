#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "coin/config.hpp"
#include "coin/errors.hpp"
#include "coin/models.hpp"

namespace coin {

inline constexpr int checkpoint_format_version = 1;

/// Sidecar path: weights file name + ".meta".
inline std::filesystem::path meta_path(const std::filesystem::path& weights) {
    return std::filesystem::path(weights.string() + ".meta");
}

namespace detail {

template <typename T> constexpr const char* scalar_name() { return sizeof(T) == 4 ? "f32" : "f64"; }

inline constexpr char weights_magic[8] = {'C', 'O', 'I', 'N', 'W', 'T', 'S', '\0'};

inline std::uint64_t fnv(std::uint64_t h, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename V>
void put(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V take(std::istream& is, const std::string& file) {
    V v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError(file + ": truncated checkpoint");
    return v;
}

inline std::map<std::string, std::string> flatten_spec(const Json& spec) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : spec.items()) out[k] = v.dump();
    return out;
}

inline std::map<std::string, std::string> read_meta(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot read checkpoint sidecar " + p.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError(p.string() + ": malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

template <typename T>
void save_store(const nn::ParamStore<T>& store, const std::filesystem::path& path, const std::string& kind,
                const Json& spec) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp.string());
        f.write(weights_magic, sizeof(weights_magic));
        put(f, static_cast<std::uint32_t>(checkpoint_format_version));
        put(f, static_cast<std::uint32_t>(sizeof(T)));
        const auto n = store.params().size() + store.buffers().size();
        put(f, static_cast<std::uint64_t>(n));
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto one = [&](const std::string& name, const Tensor<T>& t) {
            put(f, static_cast<std::uint32_t>(name.size()));
            f.write(name.data(), static_cast<std::streamsize>(name.size()));
            const Shape& s = t.shape();
            for (int d : {s.n, s.c, s.h, s.w}) put(f, static_cast<std::int32_t>(d));
            f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
            h = fnv(h, t.data(), t.size() * sizeof(T));
        };
        for (const auto& [name, p] : store.params()) one(name, p->value);
        for (const auto& [name, b] : store.buffers()) one(name, *b);
        put(f, h);
        if (!f) throw IoError("cannot write " + tmp.string());
    }
    {
        std::ofstream m(meta_path(path));
        if (!m) throw IoError("cannot write " + meta_path(path).string());
        m << "format_version=" << checkpoint_format_version << '\n'
          << "kind=" << kind << '\n'
          << "scalar=" << scalar_name<T>() << '\n';
        for (const auto& [k, v] : flatten_spec(spec)) m << "spec." << k << '=' << v << '\n';
        if (!m) throw IoError("cannot write " + meta_path(path).string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

/// Checks the sidecar header and returns the stored spec as a JSON object.
template <typename T>
nlohmann::json check_meta(const std::filesystem::path& path, const std::string& kind) {
    auto kv = read_meta(meta_path(path));
    const std::string where = meta_path(path).string();
    auto field = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw IoError(where + ": missing " + k);
        return it->second;
    };
    if (field("format_version") != std::to_string(checkpoint_format_version))
        throw ConfigError(where + ": format_version " + field("format_version") + " (expected " +
                          std::to_string(checkpoint_format_version) + ")");
    if (field("kind") != kind) throw ConfigError(where + ": holds a " + field("kind") + ", expected " + kind);
    if (field("scalar") != scalar_name<T>())
        throw ConfigError(where + ": scalar type " + field("scalar") + ", expected " + scalar_name<T>());
    nlohmann::json spec = nlohmann::json::object();
    for (const auto& [k, v] : kv) {
        if (k.rfind("spec.", 0) != 0) continue;
        try {
            spec[k.substr(5)] = nlohmann::json::parse(v);
        } catch (const nlohmann::json::parse_error&) {
            throw IoError(where + ": malformed value for " + k);
        }
    }
    return spec;
}

inline void compare_spec(const std::filesystem::path& path, const Json& stored, const Json& expected) {
    for (const auto& [k, v] : expected.items()) {
        if (!stored.contains(k))
            throw ConfigError(meta_path(path).string() + ": spec field " + k + " missing");
        if (stored.at(k) != v)
            throw ConfigError(meta_path(path).string() + ": spec field " + k + " is " + stored.at(k).dump() +
                              ", expected " + v.dump());
    }
}

/// Reads every tensor before touching the store, so a bad file leaves it unchanged.
template <typename T>
void load_store(nn::ParamStore<T>& store, const std::filesystem::path& path) {
    const std::string file = path.string();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + file);
    char magic[sizeof(weights_magic)];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, weights_magic, sizeof(magic)) != 0)
        throw IoError(file + ": not a weights file");
    if (take<std::uint32_t>(f, file) != checkpoint_format_version) throw ConfigError(file + ": format version mismatch");
    if (take<std::uint32_t>(f, file) != sizeof(T)) throw ConfigError(file + ": scalar size mismatch");
    const auto n = take<std::uint64_t>(f, file);
    if (n != store.params().size() + store.buffers().size())
        throw ConfigError(file + ": holds " + std::to_string(n) + " tensors, model expects " +
                          std::to_string(store.params().size() + store.buffers().size()));
    std::vector<const Tensor<T>*> targets;
    std::vector<std::string> names;
    for (const auto& [name, p] : store.params()) {
        targets.push_back(&p->value);
        names.push_back(name);
    }
    for (const auto& [name, b] : store.buffers()) {
        targets.push_back(b.get());
        names.push_back(name);
    }
    std::vector<Tensor<T>> loaded;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        const auto len = take<std::uint32_t>(f, file);
        if (len > 4096) throw IoError(file + ": corrupt tensor name");
        std::string name(len, '\0');
        if (!f.read(name.data(), len)) throw IoError(file + ": truncated checkpoint");
        if (name != names[i]) throw ConfigError(file + ": tensor " + name + " where " + names[i] + " was expected");
        Shape s;
        s.n = take<std::int32_t>(f, file);
        s.c = take<std::int32_t>(f, file);
        s.h = take<std::int32_t>(f, file);
        s.w = take<std::int32_t>(f, file);
        if (!(s == targets[i]->shape()))
            throw ConfigError(file + ": tensor " + name + " has shape " + s.str() + ", model expects " +
                              targets[i]->shape().str());
        Tensor<T> t(s);
        if (!f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T))))
            throw IoError(file + ": truncated checkpoint");
        h = fnv(h, t.data(), t.size() * sizeof(T));
        loaded.push_back(std::move(t));
    }
    if (take<std::uint64_t>(f, file) != h) throw IoError(file + ": checksum mismatch");
    if (f.peek() != std::char_traits<char>::eof()) throw IoError(file + ": trailing bytes");
    std::size_t k = 0;
    for (auto& [_, p] : store.params()) p->value = std::move(loaded[k++]);
    for (auto& [_, b] : store.buffers()) *b = std::move(loaded[k++]);
}

template <typename Spec>
Spec spec_from_meta(const nlohmann::json& j, const std::filesystem::path& path) {
    Spec s;
    read(JsonReader(j, meta_path(path).string()), s);
    s.validate();
    return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Classifier<T>& m, const std::filesystem::path& path) {
    detail::save_store(m.params(), path, "classifier", to_json(m.spec()));
}
template <typename T>
void save_checkpoint(const Generator<T>& m, const std::filesystem::path& path) {
    detail::save_store(m.params(), path, "generator", to_json(m.spec()));
}
template <typename T>
void save_checkpoint(const Discriminator<T>& m, const std::filesystem::path& path) {
    detail::save_store(m.params(), path, "discriminator", to_json(m.spec()));
}

/// Rebuilds the model from the sidecar spec. With `expected`, every field of
/// it must match the stored one.
template <typename T>
Classifier<T> load_classifier(const std::filesystem::path& path, const ClassifierSpec* expected = nullptr) {
    const auto stored = detail::check_meta<T>(path, "classifier");
    if (expected) detail::compare_spec(path, stored, to_json(*expected));
    Classifier<T> m(detail::spec_from_meta<ClassifierSpec>(stored, path), 0);
    detail::load_store(m.params(), path);
    return m;
}

template <typename T>
Generator<T> load_generator(const std::filesystem::path& path, const GeneratorSpec* expected = nullptr) {
    const auto stored = detail::check_meta<T>(path, "generator");
    if (expected) detail::compare_spec(path, stored, to_json(*expected));
    Generator<T> m(detail::spec_from_meta<GeneratorSpec>(stored, path), 0);
    detail::load_store(m.params(), path);
    return m;
}

template <typename T>
Discriminator<T> load_discriminator(const std::filesystem::path& path, const DiscriminatorSpec* expected = nullptr) {
    const auto stored = detail::check_meta<T>(path, "discriminator");
    if (expected) detail::compare_spec(path, stored, to_json(*expected));
    Discriminator<T> m(detail::spec_from_meta<DiscriminatorSpec>(stored, path), 0);
    detail::load_store(m.params(), path);
    return m;
}

}  // namespace coin
