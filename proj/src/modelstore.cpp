#include "whodet/modelstore.hpp"

#include <cmath>

#include "whodet/error.hpp"
#include "whodet/io_util.hpp"

namespace whodet {

using nlohmann::json;

namespace {

bool all_finite(std::span<const float> v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

json geometry_to_json(const CellGeometry& g) {
    return {{"cellWidth", g.cellWidth}, {"cellHeight", g.cellHeight}, {"borderX", g.borderX}, {"borderY", g.borderY}};
}

/// Typed field access that reports the JSON path on failure.
class Reader {
public:
    explicit Reader(std::string source) : source_(std::move(source)) {}

    [[noreturn]] void schema(const std::string& path, const std::string& msg) const {
        throw SchemaError(source_ + ": " + path + ": " + msg);
    }
    [[noreturn]] void nonFinite(const std::string& path) const {
        throw NonFiniteError(source_ + ": " + path + ": contains non-finite values");
    }

    const json& field(const json& obj, const std::string& key, const std::string& path) const {
        if (!obj.is_object()) schema(path, "expected an object");
        const auto it = obj.find(key);
        if (it == obj.end()) schema(path + "." + key, "missing");
        return *it;
    }

    long long integer(const json& obj, const std::string& key, const std::string& path) const {
        const json& v = field(obj, key, path);
        if (!v.is_number_integer()) schema(path + "." + key, "expected an integer");
        return v.get<long long>();
    }

    double number(const json& obj, const std::string& key, const std::string& path) const {
        const json& v = field(obj, key, path);
        if (v.is_null()) nonFinite(path + "." + key);
        if (!v.is_number()) schema(path + "." + key, "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) nonFinite(path + "." + key);
        return d;
    }

    std::string text(const json& obj, const std::string& key, const std::string& path) const {
        const json& v = field(obj, key, path);
        if (!v.is_string()) schema(path + "." + key, "expected a string");
        return v.get<std::string>();
    }

    std::vector<double> numbers(const json& v, const std::string& path) const {
        if (!v.is_array()) schema(path, "expected an array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (e.is_null()) nonFinite(path);
            if (!e.is_number()) schema(path, "expected an array of numbers");
            out.push_back(e.get<double>());
            if (!std::isfinite(out.back())) nonFinite(path);
        }
        return out;
    }

    std::string payload(const json& obj, const std::string& key, const std::string& path) const {
        const std::string b64 = text(obj, key, path);
        try {
            return base64_decode(b64);
        } catch (const Error& e) {
            schema(path + "." + key, std::string("invalid base64 payload (") + e.what() + ")");
        }
    }

    std::vector<float> floats(const json& obj, const std::string& key, const std::string& path) const {
        const std::string bytes = payload(obj, key, path);
        if (bytes.size() % 4) schema(path + "." + key, "payload is not a whole number of f32 values");
        return decode_f32(bytes);
    }

    std::vector<double> doubles(const json& obj, const std::string& key, const std::string& path) const {
        const std::string bytes = payload(obj, key, path);
        if (bytes.size() % 8) schema(path + "." + key, "payload is not a whole number of f64 values");
        return decode_f64(bytes);
    }

private:
    std::string source_;
};

int positive_int(const Reader& r, const json& obj, const std::string& key, const std::string& path) {
    const long long v = r.integer(obj, key, path);
    if (v < 1 || v > (1 << 20)) r.schema(path + "." + key, "must be in [1, 2^20]");
    return static_cast<int>(v);
}

}  // namespace

void validate(const DetectorModel& model) {
    if (model.formatVersion != kModelFormatVersion)
        throw ValidationError("model format version " + std::to_string(model.formatVersion) + " is not supported");
    model.pipeline.validate();
    if (model.intervalsPerOctave < 1) throw ValidationError("model intervalsPerOctave must be at least 1");
    if (model.components.empty()) throw ValidationError("model has no components");
    const int F = model.pipeline.outputChannels();
    for (std::size_t i = 0; i < model.components.size(); ++i) {
        const ModelComponent& c = model.components[i];
        const std::string id = "component " + std::to_string(i);
        if (c.filter.empty()) throw ValidationError(id + " has an empty filter");
        if (c.filter.channels() != F)
            throw ValidationError(id + " has " + std::to_string(c.filter.channels()) +
                                  " channels, the pipeline delivers " + std::to_string(F));
        if (!all_finite(c.filter.data())) throw ValidationError(id + " filter contains non-finite values");
        if (!std::isfinite(c.bias) || !std::isfinite(c.threshold))
            throw ValidationError(id + " bias and threshold must be finite");
        if (!c.positiveMean.empty()) {
            if (c.positiveMean.width() != c.filter.width() || c.positiveMean.height() != c.filter.height() ||
                c.positiveMean.channels() != c.filter.channels())
                throw ValidationError(id + " positive mean differs in shape from the filter");
            if (!all_finite(c.positiveMean.data())) throw ValidationError(id + " positive mean contains non-finite values");
        }
    }
}

json model_to_json(const DetectorModel& model) {
    validate(model);
    const auto& ex = model.pipeline.extractor;
    json extractor = {{"kind", to_string(ex.kind)}, {"maxImageDimension", ex.maxImageDimension}};
    if (ex.kind == ExtractorKind::Hog) {
        extractor["cellSize"] = ex.hogCellSize;
    } else {
        extractor["rawChannels"] = ex.rawChannels;
        extractor["layers"] = ex.layers;
        extractor["geometry"] = geometry_to_json(ex.geometry);
        extractor["manifest"] = ex.manifest.generic_string();
    }

    json pipeline = {{"extractor", extractor}, {"scaler", nullptr}, {"pca", nullptr}};
    if (model.pipeline.scaler) pipeline["scaler"] = {{"maxAbs", model.pipeline.scaler->maxAbs}};
    if (const auto& pca = model.pipeline.pca) {
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> basis = pca->basis;
        pipeline["pca"] = {
            {"k", pca->outputDim()},
            {"F", pca->inputDim()},
            {"mean", base64_encode(encode_f64({pca->mean.data(), static_cast<std::size_t>(pca->mean.size())}))},
            {"basis", base64_encode(encode_f64({basis.data(), static_cast<std::size_t>(basis.size())}))},
            {"eigenvalues", std::vector<double>(pca->eigenvalues.data(), pca->eigenvalues.data() + pca->eigenvalues.size())},
        };
    }

    json components = json::array();
    for (const auto& c : model.components) {
        json jc = {{"width", c.filter.width()},
                   {"height", c.filter.height()},
                   {"channels", c.filter.channels()},
                   {"bias", c.bias},
                   {"threshold", c.threshold},
                   {"filter", base64_encode(encode_f32(c.filter.data()))}};
        if (!c.positiveMean.empty()) jc["positiveMean"] = base64_encode(encode_f32(c.positiveMean.data()));
        components.push_back(std::move(jc));
    }

    return {{"magic", kModelMagic},
            {"formatVersion", model.formatVersion},
            {"className", model.className},
            {"intervalsPerOctave", model.intervalsPerOctave},
            {"pipeline", pipeline},
            {"components", components}};
}

DetectorModel model_from_json(const json& j, const std::string& source) {
    const Reader r(source);
    if (!j.is_object()) r.schema("$", "expected a JSON object");
    const auto magic = j.find("magic");
    if (magic == j.end() || !magic->is_string() || magic->get<std::string>() != kModelMagic)
        r.schema("$.magic", std::string("expected \"") + kModelMagic + "\"");
    const long long version = r.integer(j, "formatVersion", "$");
    if (version != kModelFormatVersion)
        throw VersionError(source + ": formatVersion " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kModelFormatVersion) + ")");

    DetectorModel model;
    model.formatVersion = static_cast<int>(version);
    model.className = r.text(j, "className", "$");
    model.intervalsPerOctave = positive_int(r, j, "intervalsPerOctave", "$");

    const json& jp = r.field(j, "pipeline", "$");
    const json& je = r.field(jp, "extractor", "$.pipeline");
    const std::string ep = "$.pipeline.extractor";
    auto& ex = model.pipeline.extractor;
    try {
        ex.kind = extractor_kind_from_string(r.text(je, "kind", ep));
    } catch (const ValidationError& e) {
        r.schema(ep + ".kind", e.what());
    }
    ex.maxImageDimension = positive_int(r, je, "maxImageDimension", ep);
    if (ex.kind == ExtractorKind::Hog) {
        ex.hogCellSize = positive_int(r, je, "cellSize", ep);
    } else {
        ex.rawChannels = positive_int(r, je, "rawChannels", ep);
        ex.layers = positive_int(r, je, "layers", ep);
        const json& jg = r.field(je, "geometry", ep);
        const std::string gp = ep + ".geometry";
        ex.geometry.cellWidth = positive_int(r, jg, "cellWidth", gp);
        ex.geometry.cellHeight = positive_int(r, jg, "cellHeight", gp);
        ex.geometry.borderX = static_cast<int>(r.integer(jg, "borderX", gp));
        ex.geometry.borderY = static_cast<int>(r.integer(jg, "borderY", gp));
        if (je.contains("manifest")) ex.manifest = r.text(je, "manifest", ep);
    }

    const json& js = r.field(jp, "scaler", "$.pipeline");
    if (!js.is_null()) model.pipeline.scaler = ChannelScaler{r.numbers(r.field(js, "maxAbs", "$.pipeline.scaler"),
                                                                       "$.pipeline.scaler.maxAbs")};

    const json& jpca = r.field(jp, "pca", "$.pipeline");
    if (!jpca.is_null()) {
        const std::string pp = "$.pipeline.pca";
        const int k = positive_int(r, jpca, "k", pp);
        const int F = positive_int(r, jpca, "F", pp);
        const std::vector<double> mean = r.doubles(jpca, "mean", pp);
        const std::vector<double> basis = r.doubles(jpca, "basis", pp);
        const std::vector<double> eig = r.numbers(r.field(jpca, "eigenvalues", pp), pp + ".eigenvalues");
        if (mean.size() != static_cast<std::size_t>(F))
            r.schema(pp + ".mean", "holds " + std::to_string(mean.size()) + " values, expected F = " + std::to_string(F));
        if (basis.size() != static_cast<std::size_t>(k) * F)
            r.schema(pp + ".basis", "holds " + std::to_string(basis.size()) + " values, expected k * F = " +
                                        std::to_string(static_cast<std::size_t>(k) * F));
        if (eig.size() != static_cast<std::size_t>(k)) r.schema(pp + ".eigenvalues", "expected k values");
        PcaTransform pca;
        pca.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), F);
        pca.basis = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(basis.data(), k, F);
        pca.eigenvalues = Eigen::Map<const Eigen::VectorXd>(eig.data(), k);
        if (!pca.mean.allFinite()) r.nonFinite(pp + ".mean");
        if (!pca.basis.allFinite()) r.nonFinite(pp + ".basis");
        model.pipeline.pca = std::move(pca);
    }

    const json& jc = r.field(j, "components", "$");
    if (!jc.is_array() || jc.empty()) r.schema("$.components", "expected a non-empty array");
    for (std::size_t i = 0; i < jc.size(); ++i) {
        const std::string cp = "$.components[" + std::to_string(i) + "]";
        const json& c = jc[i];
        const int w = positive_int(r, c, "width", cp);
        const int h = positive_int(r, c, "height", cp);
        const int f = positive_int(r, c, "channels", cp);
        const std::size_t expected = static_cast<std::size_t>(w) * h * f;
        ModelComponent comp;
        comp.bias = r.number(c, "bias", cp);
        comp.threshold = r.number(c, "threshold", cp);
        std::vector<float> filter = r.floats(c, "filter", cp);
        if (filter.size() != expected)
            r.schema(cp + ".filter", "component " + std::to_string(i) + " filter holds " + std::to_string(filter.size()) +
                                         " values, expected M*N*F = " + std::to_string(expected));
        if (!all_finite(filter)) r.nonFinite(cp + ".filter");
        comp.filter = FeatureMap(w, h, f, std::move(filter));
        if (c.contains("positiveMean")) {
            std::vector<float> pm = r.floats(c, "positiveMean", cp);
            if (pm.size() != expected)
                r.schema(cp + ".positiveMean", "component " + std::to_string(i) + " positive mean holds " +
                                                   std::to_string(pm.size()) + " values, expected " +
                                                   std::to_string(expected));
            if (!all_finite(pm)) r.nonFinite(cp + ".positiveMean");
            comp.positiveMean = FeatureMap(w, h, f, std::move(pm));
        }
        model.components.push_back(std::move(comp));
    }

    try {
        validate(model);
    } catch (const ValidationError& e) {
        r.schema("$", e.what());
    }
    return model;
}

void save_model(const DetectorModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, model_to_json(model).dump(1) + "\n");
}

DetectorModel load_model(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": not valid JSON (" + e.what() + ")");
    }
    return model_from_json(j, path.string());
}

}  // namespace whodet
