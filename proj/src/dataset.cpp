#include "fedpoison/dataset.hpp"

#include "fedpoison/errors.hpp"
#include "fedpoison/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedpoison {

namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream stream(line);
    while (std::getline(stream, cell, ',')) {
        cells.push_back(trim(cell));
    }
    if (!line.empty() && line.back() == ',') {
        cells.push_back("");
    }
    return cells;
}

std::optional<double> parse_cell(const std::string& cell) {
    if (cell.empty()) {
        return std::nullopt;
    }
    const char* begin = cell.c_str();
    char* end = nullptr;
    double value = std::strtod(begin, &end);
    if (end != begin + cell.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

Dataset gather(const Dataset& ds, const std::vector<Index>& rows) {
    Dataset out;
    out.feature_names = ds.feature_names;
    out.X.resize(static_cast<Index>(rows.size()), ds.cols());
    out.y.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.X.row(static_cast<Index>(i)) = ds.X.row(rows[i]);
        out.y.push_back(ds.y[static_cast<std::size_t>(rows[i])]);
    }
    return out;
}

/// Largest-remainder apportionment of `total` slots across class counts.
std::array<Index, 2> apportion(std::array<Index, 2> class_counts, Index n, Index total) {
    std::array<Index, 2> take{};
    std::array<double, 2> frac{};
    Index assigned = 0;
    for (int c = 0; c < 2; ++c) {
        double exact = static_cast<double>(total) * static_cast<double>(class_counts[c]) /
                       static_cast<double>(n);
        take[c] = static_cast<Index>(std::floor(exact));
        frac[c] = exact - static_cast<double>(take[c]);
        assigned += take[c];
    }
    for (Index left = total - assigned; left > 0; --left) {
        int pick = (frac[1] > frac[0]) ? 1 : 0;
        ++take[pick];
        frac[pick] = -1.0;
    }
    return take;
}

}  // namespace

Index SplitBundle::train_rows() const {
    Index total = 0;
    for (const auto& shard : client_shards) {
        total += shard.rows();
    }
    return total;
}

RawTable load_csv(const std::filesystem::path& path, int label_column) {
    std::ifstream file(path);
    if (!file) {
        throw ParseError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(file, line)) {
        throw ParseError(path.string() + ": empty file, expected a header row");
    }
    auto header = split_line(line);
    const int num_columns = static_cast<int>(header.size());
    if (num_columns < 2) {
        throw ParseError(path.string() + ": need at least one feature column and a label");
    }
    int label_index = label_column < 0 ? num_columns - 1 : label_column;
    if (label_index >= num_columns) {
        throw std::invalid_argument("label column " + std::to_string(label_column) +
                                    " out of range for " + std::to_string(num_columns) +
                                    " columns");
    }

    RawTable table;
    table.label_name = header[static_cast<std::size_t>(label_index)];
    for (int c = 0; c < num_columns; ++c) {
        if (c != label_index) {
            table.feature_names.push_back(header[static_cast<std::size_t>(c)]);
        }
    }

    long line_number = 1;
    while (std::getline(file, line)) {
        ++line_number;
        if (trim(line).empty()) {
            continue;
        }
        auto cells = split_line(line);
        if (static_cast<int>(cells.size()) != num_columns) {
            throw ParseError(path.string() + ":" + std::to_string(line_number) + ": expected " +
                             std::to_string(num_columns) + " cells, got " +
                             std::to_string(cells.size()));
        }
        RawRow row;
        for (int c = 0; c < num_columns; ++c) {
            const auto& cell = cells[static_cast<std::size_t>(c)];
            if (c == label_index) {
                auto value = parse_cell(cell);
                if (!value || (*value != 0.0 && *value != 1.0)) {
                    throw ParseError(path.string() + ":" + std::to_string(line_number) +
                                     ": label must be 0 or 1, got \"" + cell + "\"");
                }
                row.label = static_cast<int>(*value);
            } else {
                row.features.push_back(parse_cell(cell));
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

Dataset preprocess(const RawTable& table, const PreprocessConfig& cfg) {
    const Index n = static_cast<Index>(table.rows.size());
    const Index d = static_cast<Index>(table.feature_names.size());
    if (n == 0) {
        throw std::invalid_argument("preprocess: table has no rows");
    }

    Dataset ds;
    ds.feature_names = table.feature_names;
    ds.X.resize(n, d);
    ds.y.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const auto& row = table.rows[static_cast<std::size_t>(i)];
        if (static_cast<Index>(row.features.size()) != d) {
            throw std::invalid_argument("preprocess: row " + std::to_string(i) +
                                        " has wrong width");
        }
        for (Index j = 0; j < d; ++j) {
            const auto& cell = row.features[static_cast<std::size_t>(j)];
            ds.X(i, j) = cell ? *cell : cfg.fill_value;
        }
        ds.y.push_back(row.label);
    }

    if (cfg.normalize) {
        for (Index j = 0; j < d; ++j) {
            double lo = ds.X.col(j).minCoeff();
            double hi = ds.X.col(j).maxCoeff();
            if (hi > lo) {
                ds.X.col(j) = (ds.X.col(j).array() - lo) / (hi - lo);
            } else {
                ds.X.col(j).setZero();
            }
        }
    }
    return ds;
}

ThreeWaySplit stratified_split(const Dataset& ds, std::uint64_t seed) {
    const Index n = ds.rows();
    if (n < 10) {
        throw std::invalid_argument("stratified_split: need at least 10 rows, got " +
                                    std::to_string(n));
    }
    const Index holdout = n / 10;

    std::array<std::vector<Index>, 2> by_class;
    for (Index i = 0; i < n; ++i) {
        int label = ds.y[static_cast<std::size_t>(i)];
        if (label != 0 && label != 1) {
            throw std::invalid_argument("stratified_split: label out of range");
        }
        by_class[static_cast<std::size_t>(label)].push_back(i);
    }
    std::array<Index, 2> counts{static_cast<Index>(by_class[0].size()),
                                static_cast<Index>(by_class[1].size())};
    auto take = apportion(counts, n, holdout);
    for (int c = 0; c < 2; ++c) {
        if (counts[c] < 2 * take[c]) {
            throw StratificationError("class " + std::to_string(c) + " has " +
                                      std::to_string(counts[c]) +
                                      " rows, too few for two holdouts of " +
                                      std::to_string(take[c]));
        }
    }

    std::vector<Index> val_rows, test_rows, train_rows;
    for (int c = 0; c < 2; ++c) {
        auto& rows = by_class[static_cast<std::size_t>(c)];
        Rng rng(derive_seed(seed, SeedStream::kSplit, {static_cast<std::uint64_t>(c)}));
        std::shuffle(rows.begin(), rows.end(), rng);
        auto it = rows.begin();
        val_rows.insert(val_rows.end(), it, it + take[c]);
        it += take[c];
        test_rows.insert(test_rows.end(), it, it + take[c]);
        it += take[c];
        train_rows.insert(train_rows.end(), it, rows.end());
    }
    Rng train_rng(derive_seed(seed, SeedStream::kSplit, {2}));
    std::shuffle(train_rows.begin(), train_rows.end(), train_rng);

    return ThreeWaySplit{gather(ds, train_rows), gather(ds, val_rows), gather(ds, test_rows)};
}

SplitBundle split(const Dataset& ds, int num_clients, std::uint64_t seed) {
    auto parts = stratified_split(ds, seed);
    SplitBundle bundle;
    bundle.client_shards = partition_clients(parts.train, num_clients, seed);
    bundle.validation = std::move(parts.validation);
    bundle.test = std::move(parts.test);
    return bundle;
}

std::vector<Dataset> partition_clients(const Dataset& train, int num_clients,
                                       std::uint64_t seed) {
    const Index n = train.rows();
    if (num_clients < 1) {
        throw std::invalid_argument("partition_clients: need at least one client");
    }
    if (static_cast<Index>(num_clients) > n) {
        throw std::invalid_argument("partition_clients: " + std::to_string(num_clients) +
                                    " clients but only " + std::to_string(n) + " rows");
    }

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(derive_seed(seed, SeedStream::kPartition));
    std::shuffle(order.begin(), order.end(), rng);

    const Index base = n / num_clients;
    const Index extra = n % num_clients;
    std::vector<Dataset> shards;
    shards.reserve(static_cast<std::size_t>(num_clients));
    auto it = order.begin();
    for (int c = 0; c < num_clients; ++c) {
        Index size = base + (static_cast<Index>(c) < extra ? 1 : 0);
        std::vector<Index> rows(it, it + size);
        it += size;
        shards.push_back(gather(train, rows));
    }
    return shards;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
    if (spec.n < 2 || spec.d < 1) {
        throw std::invalid_argument("gen_synthetic: need n >= 2 and d >= 1");
    }
    if (spec.informative_feature < 0 || spec.informative_feature >= spec.d) {
        throw std::invalid_argument("gen_synthetic: informative_feature out of range");
    }
    if (spec.noise_sd <= 0.0 || spec.class_separation < 0.0) {
        throw std::invalid_argument("gen_synthetic: noise_sd must be positive and "
                                    "class_separation non-negative");
    }

    Dataset ds;
    ds.y.assign(static_cast<std::size_t>(spec.n), 0);
    for (Index i = (spec.n + 1) / 2; i < spec.n; ++i) {
        ds.y[static_cast<std::size_t>(i)] = 1;
    }
    Rng rng(derive_seed(spec.seed, SeedStream::kSynthetic));
    std::shuffle(ds.y.begin(), ds.y.end(), rng);

    ds.X.resize(spec.n, spec.d);
    for (Index j = 0; j < spec.d; ++j) {
        ds.feature_names.push_back("f" + std::to_string(j));
        if (j == spec.informative_feature) {
            std::normal_distribution<double> noise(0.0, spec.noise_sd);
            const double shift = spec.class_separation * spec.noise_sd;
            for (Index i = 0; i < spec.n; ++i) {
                double mean = ds.y[static_cast<std::size_t>(i)] == 1 ? shift : 0.0;
                ds.X(i, j) = mean + noise(rng);
            }
            double lo = ds.X.col(j).minCoeff();
            double hi = ds.X.col(j).maxCoeff();
            if (hi > lo) {
                ds.X.col(j) = (ds.X.col(j).array() - lo) / (hi - lo);
            } else {
                ds.X.col(j).setZero();
            }
        } else {
            std::uniform_real_distribution<double> uniform(0.0, 1.0);
            for (Index i = 0; i < spec.n; ++i) {
                ds.X(i, j) = uniform(rng);
            }
        }
    }
    return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream file(path);
    if (!file) {
        throw std::runtime_error("cannot write " + path.string());
    }
    for (const auto& name : ds.feature_names) {
        file << name << ',';
    }
    file << "label\n";
    char buffer[64];
    for (Index i = 0; i < ds.rows(); ++i) {
        for (Index j = 0; j < ds.cols(); ++j) {
            std::snprintf(buffer, sizeof(buffer), "%.17g", ds.X(i, j));
            file << buffer << ',';
        }
        file << ds.y[static_cast<std::size_t>(i)] << '\n';
    }
    if (!file) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

}  // namespace fedpoison
