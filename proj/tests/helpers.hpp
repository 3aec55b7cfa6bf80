#pragma once

#include "fedpoison/dataset.hpp"
#include "fedpoison/nn.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fedpoison::testing {

/// Scratch directory removed on destruction.
class TempDir {
  public:
    TempDir() {
        auto pattern = (std::filesystem::temp_directory_path() / "fedpoison-XXXXXX").string();
        std::vector<char> buffer(pattern.begin(), pattern.end());
        buffer.push_back('\0');
        if (!mkdtemp(buffer.data())) {
            throw std::runtime_error("mkdtemp failed");
        }
        path_ = buffer.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path file(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream file(path);
    file << content;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream file(path);
    return std::string(std::istreambuf_iterator<char>(file),
                       std::istreambuf_iterator<char>());
}

inline Dataset make_dataset(const std::vector<std::vector<double>>& rows,
                            const std::vector<int>& labels) {
    Dataset ds;
    ds.X.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            ds.X(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
        }
    }
    ds.y = labels;
    for (Index j = 0; j < ds.cols(); ++j) {
        ds.feature_names.push_back("f" + std::to_string(j));
    }
    return ds;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

inline double params_distance(const Bau1Params& a, const Bau1Params& b) {
    double d = 0.0;
    d = std::max(d, max_abs_diff(a.layer1.weights, b.layer1.weights));
    d = std::max(d, max_abs_diff(a.layer1.bias, b.layer1.bias));
    d = std::max(d, max_abs_diff(a.bn1.gamma, b.bn1.gamma));
    d = std::max(d, max_abs_diff(a.bn1.beta, b.bn1.beta));
    d = std::max(d, max_abs_diff(a.bn1.running_mean, b.bn1.running_mean));
    d = std::max(d, max_abs_diff(a.bn1.running_var, b.bn1.running_var));
    d = std::max(d, max_abs_diff(a.layer2.weights, b.layer2.weights));
    d = std::max(d, max_abs_diff(a.layer2.bias, b.layer2.bias));
    d = std::max(d, max_abs_diff(a.bn2.gamma, b.bn2.gamma));
    d = std::max(d, max_abs_diff(a.bn2.beta, b.bn2.beta));
    d = std::max(d, max_abs_diff(a.bn2.running_mean, b.bn2.running_mean));
    d = std::max(d, max_abs_diff(a.bn2.running_var, b.bn2.running_var));
    d = std::max(d, max_abs_diff(a.layer3.weights, b.layer3.weights));
    d = std::max(d, max_abs_diff(a.layer3.bias, b.layer3.bias));
    return d;
}

inline bool params_identical(const Bau1Params& a, const Bau1Params& b) {
    return params_distance(a, b) == 0.0;
}

/// Separable two-blob dataset small enough for fast training tests.
inline Dataset easy_blobs(Index n, Index d, std::uint64_t seed,
                          double separation = 6.0) {
    SyntheticSpec spec;
    spec.n = n;
    spec.d = d;
    spec.class_separation = separation;
    spec.seed = seed;
    return gen_synthetic(spec);
}

}  // namespace fedpoison::testing
