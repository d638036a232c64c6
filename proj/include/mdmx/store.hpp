#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdmx/numerics/linalg.hpp"
#include "mdmx/numerics/mlp.hpp"

namespace mdmx {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);
// Hash over the sorted relative paths and contents of every regular file.
std::string sha256_tree(const std::string& dir, const std::vector<std::string>& skip_dirs = {});

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);
void ensure_dir(const std::string& path);
bool path_exists(const std::string& path);
std::string join_path(const std::string& a, const std::string& b);

// %.17g, so values survive a round trip.
std::string fmt_double(double v);

// Directory of raw little-endian arrays plus manifest.json describing them.
// The manifest carries no timestamps, so identical content gives identical bytes.
class StoreWriter {
public:
    explicit StoreWriter(std::string dir);

    void put(const std::string& name, const Matrix& m);  // f64, row-major
    void put(const std::string& name, const Vector& v);
    void put_ints(const std::string& name, const std::vector<int>& v, std::vector<long> shape = {});
    void put_mlp(const std::string& prefix, const Mlp& net);

    nlohmann::json& meta() { return meta_; }
    const std::string& dir() const { return dir_; }
    void finish();  // writes manifest.json

private:
    void write_blob(const std::string& name, const std::string& dtype, std::vector<long> shape, const void* data,
                    std::size_t bytes);
    std::string dir_;
    nlohmann::json arrays_ = nlohmann::json::object();
    nlohmann::json meta_ = nlohmann::json::object();
};

class StoreReader {
public:
    explicit StoreReader(std::string dir);  // MissingInput when the manifest is absent

    bool has(const std::string& name) const;
    Matrix matrix(const std::string& name) const;
    Vector vector(const std::string& name) const;
    std::vector<int> ints(const std::string& name) const;
    Mlp mlp(const std::string& prefix) const;

    const nlohmann::json& meta() const { return meta_; }
    const nlohmann::json& manifest() const { return manifest_; }
    const std::string& dir() const { return dir_; }

private:
    std::string blob(const std::string& name, const std::string& dtype, std::vector<long>& shape) const;
    std::string dir_;
    nlohmann::json manifest_, arrays_, meta_;
};

nlohmann::json to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

}  // namespace mdmx
