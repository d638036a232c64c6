#include "mdmx/store.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdmx/error.hpp"

namespace mdmx {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorCode::IoError, "sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingInput, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_text(path)); }

std::string sha256_tree(const std::string& dir, const std::vector<std::string>& skip_dirs) {
    std::vector<std::string> files;
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
        const std::string rel = fs::relative(it->path(), dir).generic_string();
        if (it->is_directory() && std::find(skip_dirs.begin(), skip_dirs.end(), rel) != skip_dirs.end()) {
            it.disable_recursion_pending();
            continue;
        }
        if (it->is_regular_file()) files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += f + '\n' + sha256_file(join_path(dir, f)) + '\n';
    return sha256_hex(acc);
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create " + path + ": " + ec.message());
}

bool path_exists(const std::string& path) { return fs::exists(path); }

std::string join_path(const std::string& a, const std::string& b) { return (fs::path(a) / b).string(); }

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- writer -------------------------------------------------------------

StoreWriter::StoreWriter(std::string dir) : dir_(std::move(dir)) { ensure_dir(dir_); }

void StoreWriter::write_blob(const std::string& name, const std::string& dtype, std::vector<long> shape,
                             const void* data, std::size_t bytes) {
    if (arrays_.contains(name)) fail(ErrorCode::DuplicateKey, "store array written twice: " + name);
    const std::string file = name + ".bin";
    std::string payload(static_cast<const char*>(data), bytes);
    write_text(join_path(dir_, file), payload);
    arrays_[name] = {{"file", file}, {"dtype", dtype}, {"shape", shape}, {"sha256", sha256_hex(payload)}};
}

void StoreWriter::put(const std::string& name, const Matrix& m) {
    std::vector<double> buf(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) buf[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    write_blob(name, "f64", {static_cast<long>(m.rows()), static_cast<long>(m.cols())}, buf.data(),
               buf.size() * sizeof(double));
}

void StoreWriter::put(const std::string& name, const Vector& v) {
    write_blob(name, "f64", {static_cast<long>(v.size())}, v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
}

void StoreWriter::put_ints(const std::string& name, const std::vector<int>& v, std::vector<long> shape) {
    if (shape.empty()) shape = {static_cast<long>(v.size())};
    std::vector<std::int32_t> buf(v.begin(), v.end());
    write_blob(name, "i32", std::move(shape), buf.data(), buf.size() * sizeof(std::int32_t));
}

void StoreWriter::put_mlp(const std::string& prefix, const Mlp& net) {
    meta_["mlp"][prefix] = net.dims();
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        put(prefix + ".w" + std::to_string(l), net.layers[l].w);
        put(prefix + ".b" + std::to_string(l), net.layers[l].b);
    }
}

void StoreWriter::finish() {
    json manifest = {{"format", "mdmx-store"}, {"version", 1}, {"arrays", arrays_}, {"meta", meta_}};
    write_text(join_path(dir_, "manifest.json"), manifest.dump(1) + "\n");
}

// ---- reader -------------------------------------------------------------

StoreReader::StoreReader(std::string dir) : dir_(std::move(dir)) {
    const std::string path = join_path(dir_, "manifest.json");
    if (!fs::exists(path)) fail(ErrorCode::MissingInput, "missing store: " + path);
    try {
        manifest_ = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseError, path + ": " + e.what());
    }
    arrays_ = manifest_.value("arrays", json::object());
    meta_ = manifest_.value("meta", json::object());
}

bool StoreReader::has(const std::string& name) const { return arrays_.contains(name); }

std::string StoreReader::blob(const std::string& name, const std::string& dtype, std::vector<long>& shape) const {
    if (!arrays_.contains(name)) fail(ErrorCode::MissingInput, "array " + name + " not in store " + dir_);
    const json& a = arrays_[name];
    if (a.at("dtype") != dtype) fail(ErrorCode::ParseError, "array " + name + " has dtype " + a.at("dtype").get<std::string>());
    shape = a.at("shape").get<std::vector<long>>();
    std::string bytes = read_text(join_path(dir_, a.at("file").get<std::string>()));
    if (sha256_hex(bytes) != a.at("sha256").get<std::string>())
        fail(ErrorCode::ParseError, "checksum mismatch for " + name + " in " + dir_);
    long n = 1;
    for (long s : shape) n *= s;
    const std::size_t width = dtype == "f64" ? sizeof(double) : sizeof(std::int32_t);
    if (bytes.size() != static_cast<std::size_t>(n) * width) fail(ErrorCode::ParseError, "size mismatch for " + name);
    return bytes;
}

Matrix StoreReader::matrix(const std::string& name) const {
    std::vector<long> shape;
    const std::string bytes = blob(name, "f64", shape);
    if (shape.size() != 2) fail(ErrorCode::ParseError, name + " is not a matrix");
    Matrix m(shape[0], shape[1]);
    const double* p = reinterpret_cast<const double*>(bytes.data());
    for (long i = 0; i < shape[0]; ++i)
        for (long j = 0; j < shape[1]; ++j) m(i, j) = p[i * shape[1] + j];
    return m;
}

Vector StoreReader::vector(const std::string& name) const {
    std::vector<long> shape;
    const std::string bytes = blob(name, "f64", shape);
    Vector v(static_cast<Eigen::Index>(bytes.size() / sizeof(double)));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

std::vector<int> StoreReader::ints(const std::string& name) const {
    std::vector<long> shape;
    const std::string bytes = blob(name, "i32", shape);
    std::vector<std::int32_t> buf(bytes.size() / sizeof(std::int32_t));
    std::memcpy(buf.data(), bytes.data(), bytes.size());
    return {buf.begin(), buf.end()};
}

Mlp StoreReader::mlp(const std::string& prefix) const {
    if (!meta_.contains("mlp") || !meta_["mlp"].contains(prefix))
        fail(ErrorCode::MissingInput, "network " + prefix + " not in store " + dir_);
    const auto dims = meta_["mlp"][prefix].get<std::vector<int>>();
    Mlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer{matrix(prefix + ".w" + std::to_string(l)), vector(prefix + ".b" + std::to_string(l))};
        if (layer.w.rows() != dims[l + 1] || layer.w.cols() != dims[l])
            fail(ErrorCode::ParseError, "layer shape mismatch in " + prefix);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const json& j) {
    const auto vals = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace mdmx
