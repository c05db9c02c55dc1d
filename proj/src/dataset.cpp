#include "transferbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "transferbench/random.hpp"

namespace transferbench {

namespace {

constexpr char kMagic[6] = {'F', 'M', 'A', 'T', '1', '\n'};

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

float f32_from_le(const unsigned char* p) {
    std::uint32_t bits = read_u32_le(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

void write_f32_le(std::ostream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32_le(out, bits);
}

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error(path.string() + ": " + what);
}

FeatureMatrix load_features_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open file");
    std::vector<unsigned char> header(14);
    in.read(reinterpret_cast<char*>(header.data()), 14);
    if (in.gcount() != 14) fail(path, "truncated header");
    if (std::memcmp(header.data(), kMagic, 6) != 0) fail(path, "bad magic, expected FMAT1");
    const std::uint64_t n = read_u32_le(header.data() + 6);
    const std::uint64_t d = read_u32_le(header.data() + 10);
    if (n == 0 || d == 0) fail(path, "header declares an empty matrix");

    const std::uint64_t count = n * d;
    std::vector<unsigned char> payload(count * 4);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::uint64_t>(in.gcount()) != payload.size())
        fail(path, "truncated payload, expected " + std::to_string(count) + " floats");
    if (in.peek() != std::ifstream::traits_type::eof()) fail(path, "trailing bytes after payload");

    Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint64_t j = 0; j < d; ++j) {
            const double v = f32_from_le(payload.data() + 4 * (i * d + j));
            if (!std::isfinite(v))
                fail(path, "non-finite value at row " + std::to_string(i) + ", column " +
                               std::to_string(j));
            values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    }
    return FeatureMatrix(std::move(values));
}

FeatureMatrix load_features_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open file");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.peek() == std::ifstream::traits_type::eof()) break;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            ++col;
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                fail(path, "unparsable value '" + cell + "' at row " + std::to_string(lineno) +
                               ", column " + std::to_string(col));
            }
            while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
            if (used != cell.size())
                fail(path, "unparsable value '" + cell + "' at row " + std::to_string(lineno) +
                               ", column " + std::to_string(col));
            if (!std::isfinite(v))
                fail(path, "non-finite value at row " + std::to_string(lineno) + ", column " +
                               std::to_string(col));
            row.push_back(v);
        }
        if (row.empty()) fail(path, "empty row " + std::to_string(lineno));
        if (!rows.empty() && row.size() != rows.front().size())
            fail(path, "row " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                           " values, expected " + std::to_string(rows.front().size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(path, "empty feature file");

    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()),
                           static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < values.rows(); ++i)
        for (Eigen::Index j = 0; j < values.cols(); ++j)
            values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return FeatureMatrix(std::move(values));
}

}  // namespace

FeatureMatrix::FeatureMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1)
        throw std::invalid_argument("feature matrix must be at least 1x1");
    if (!values_.allFinite())
        throw std::invalid_argument("feature matrix contains non-finite entries");
}

LabelVector::LabelVector(std::vector<int> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw std::invalid_argument("empty label vector");
    int max_label = -1;
    for (int v : labels_) max_label = std::max(max_label, v);
    num_classes_ = max_label + 1;
    validate();
}

LabelVector::LabelVector(std::vector<int> labels, int num_classes)
    : labels_(std::move(labels)), num_classes_(num_classes) {
    if (labels_.empty()) throw std::invalid_argument("empty label vector");
    validate();
}

void LabelVector::validate() const {
    if (num_classes_ < 1) throw std::invalid_argument("label vector needs at least one class");
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(num_classes_), 0);
    for (int v : labels_) {
        if (v < 0) throw std::invalid_argument("negative class id " + std::to_string(v));
        if (v >= num_classes_)
            throw std::invalid_argument("class id " + std::to_string(v) + " out of range [0, " +
                                        std::to_string(num_classes_) + ")");
        ++counts[static_cast<std::size_t>(v)];
    }
    for (int c = 0; c < num_classes_; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw std::invalid_argument("class " + std::to_string(c) + " unused; class ids must be dense");
    }
}

std::vector<Eigen::Index> LabelVector::class_counts() const {
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(num_classes_), 0);
    for (int v : labels_) ++counts[static_cast<std::size_t>(v)];
    return counts;
}

std::vector<std::vector<Eigen::Index>> LabelVector::indices_by_class() const {
    std::vector<std::vector<Eigen::Index>> buckets(static_cast<std::size_t>(num_classes_));
    for (std::size_t i = 0; i < labels_.size(); ++i)
        buckets[static_cast<std::size_t>(labels_[i])].push_back(static_cast<Eigen::Index>(i));
    return buckets;
}

Dataset::Dataset(FeatureMatrix features, LabelVector labels)
    : features_(std::move(features)), labels_(std::move(labels)) {
    if (labels_->size() != features_.rows())
        throw std::invalid_argument("label count " + std::to_string(labels_->size()) +
                                    " does not match sample count " + std::to_string(features_.rows()));
}

const LabelVector& Dataset::labels() const {
    if (!labels_) throw std::logic_error("dataset has no labels");
    return *labels_;
}

TruePerformanceTable::TruePerformanceTable(
    std::vector<std::string> candidates,
    std::vector<std::pair<std::string, std::vector<double>>> tasks)
    : candidates_(std::move(candidates)), tasks_(std::move(tasks)) {
    if (candidates_.empty()) throw std::invalid_argument("truth table has no candidates");
    if (tasks_.empty()) throw std::invalid_argument("truth table has no tasks");
    for (const auto& [name, values] : tasks_) {
        if (values.size() != candidates_.size())
            throw std::invalid_argument("task '" + name + "' lists " + std::to_string(values.size()) +
                                        " values for " + std::to_string(candidates_.size()) +
                                        " candidates");
        for (double v : values) {
            if (!(v >= 0.0 && v <= 100.0))
                throw std::invalid_argument("task '" + name + "' has metric value " +
                                            std::to_string(v) + " outside [0, 100]");
        }
    }
}

TruePerformanceTable TruePerformanceTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open truth table");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        fail(path, std::string("invalid JSON: ") + e.what());
    }
    std::vector<std::string> candidates = doc.at("candidates").get<std::vector<std::string>>();
    std::vector<std::pair<std::string, std::vector<double>>> tasks;
    for (const auto& task : doc.at("tasks")) {
        tasks.emplace_back(task.at("name").get<std::string>(),
                           task.at("performance").get<std::vector<double>>());
    }
    return TruePerformanceTable(std::move(candidates), std::move(tasks));
}

void TruePerformanceTable::store(const std::filesystem::path& path) const {
    nlohmann::json doc;
    doc["candidates"] = candidates_;
    doc["tasks"] = nlohmann::json::array();
    for (const auto& [name, values] : tasks_) {
        doc["tasks"].push_back({{"name", name}, {"performance", values}});
    }
    std::ofstream out(path);
    if (!out) fail(path, "cannot write truth table");
    out << doc.dump(2) << "\n";
}

std::vector<std::string> TruePerformanceTable::task_names() const {
    std::vector<std::string> names;
    names.reserve(tasks_.size());
    for (const auto& [name, _] : tasks_) names.push_back(name);
    return names;
}

bool TruePerformanceTable::has_task(const std::string& name) const {
    for (const auto& [task, _] : tasks_)
        if (task == name) return true;
    return false;
}

const std::vector<double>& TruePerformanceTable::performance(const std::string& task) const {
    for (const auto& [name, values] : tasks_)
        if (name == task) return values;
    throw std::out_of_range("truth table has no task '" + task + "'");
}

FeatureMatrix load_features(const std::filesystem::path& path, FeatureFormat format) {
    return format == FeatureFormat::binary ? load_features_binary(path) : load_features_csv(path);
}

void store_features(const std::filesystem::path& path, const FeatureMatrix& features) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open file for writing");
    out.write(kMagic, 6);
    write_u32_le(out, static_cast<std::uint32_t>(features.rows()));
    write_u32_le(out, static_cast<std::uint32_t>(features.cols()));
    const Eigen::MatrixXd& v = features.values();
    for (Eigen::Index i = 0; i < v.rows(); ++i)
        for (Eigen::Index j = 0; j < v.cols(); ++j)
            write_f32_le(out, static_cast<float>(v(i, j)));
    if (!out) fail(path, "write failed");
}

LabelVector load_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open label file");
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            if (in.peek() == std::ifstream::traits_type::eof()) break;
            fail(path, "blank line " + std::to_string(lineno));
        }
        std::size_t used = 0;
        long v = 0;
        try {
            v = std::stol(line, &used);
        } catch (const std::exception&) {
            fail(path, "unparsable label '" + line + "' at line " + std::to_string(lineno));
        }
        while (used < line.size() && std::isspace(static_cast<unsigned char>(line[used]))) ++used;
        if (used != line.size())
            fail(path, "unparsable label '" + line + "' at line " + std::to_string(lineno));
        if (v < 0) fail(path, "negative label at line " + std::to_string(lineno));
        labels.push_back(static_cast<int>(v));
    }
    if (labels.empty()) fail(path, "empty dataset");
    try {
        return LabelVector(std::move(labels));
    } catch (const std::invalid_argument& e) {
        fail(path, e.what());
    }
}

std::vector<Eigen::Index> stratified_sample_indices(const LabelVector& labels, Eigen::Index cap,
                                                    std::uint64_t seed) {
    const Eigen::Index n = labels.size();
    const int c = labels.num_classes();
    if (cap < c)
        throw std::invalid_argument("cap " + std::to_string(cap) + " cannot keep all " +
                                    std::to_string(c) + " classes");
    if (n <= cap) {
        std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        return all;
    }

    // Largest-remainder allocation of cap across classes.
    const auto counts = labels.class_counts();
    std::vector<Eigen::Index> alloc(static_cast<std::size_t>(c), 0);
    std::vector<std::pair<double, int>> remainders;
    Eigen::Index assigned = 0;
    for (int k = 0; k < c; ++k) {
        const double quota = static_cast<double>(cap) * static_cast<double>(counts[k]) /
                             static_cast<double>(n);
        alloc[k] = static_cast<Eigen::Index>(std::floor(quota));
        assigned += alloc[k];
        remainders.emplace_back(quota - std::floor(quota), k);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (Eigen::Index left = cap - assigned; left > 0; --left)
        ++alloc[static_cast<std::size_t>(remainders[static_cast<std::size_t>(cap - assigned - left)]
                                             .second)];
    // Extreme imbalance can floor a class to zero; every class must survive.
    for (int k = 0; k < c; ++k) {
        while (alloc[k] == 0) {
            int donor = static_cast<int>(std::max_element(alloc.begin(), alloc.end()) - alloc.begin());
            if (alloc[donor] <= 1) throw std::logic_error("cannot allocate one sample per class");
            --alloc[donor];
            ++alloc[k];
        }
    }

    Rng rng(seed);
    std::vector<Eigen::Index> chosen;
    chosen.reserve(static_cast<std::size_t>(cap));
    auto buckets = labels.indices_by_class();
    for (int k = 0; k < c; ++k) {
        auto& bucket = buckets[static_cast<std::size_t>(k)];
        rng.shuffle(bucket);
        chosen.insert(chosen.end(), bucket.begin(), bucket.begin() + alloc[k]);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
    return out;
}

Dataset subsample_stratified(const Dataset& ds, Eigen::Index cap, std::uint64_t seed) {
    if (!ds.has_labels()) throw std::invalid_argument("stratified subsampling requires labels");
    if (ds.size() <= cap) {
        if (cap < ds.labels().num_classes())
            throw std::invalid_argument("cap " + std::to_string(cap) + " cannot keep all classes");
        return ds;
    }
    const auto idx = stratified_sample_indices(ds.labels(), cap, seed);
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (Eigen::Index i : idx) labels.push_back(ds.labels()[i]);
    return Dataset(FeatureMatrix(take_rows(ds.features().values(), idx)),
                   LabelVector(std::move(labels), ds.labels().num_classes()));
}

}  // namespace transferbench
