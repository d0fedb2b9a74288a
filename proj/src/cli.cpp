#include "whodet/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include <CLI11.hpp>

#include "whodet/bgstats.hpp"
#include "whodet/detector.hpp"
#include "whodet/error.hpp"
#include "whodet/evalkit.hpp"
#include "whodet/io_util.hpp"
#include "whodet/learner.hpp"
#include "whodet/modelstore.hpp"
#include "whodet/pipeline.hpp"
#include "whodet/synth.hpp"
#include "whodet/transform.hpp"

namespace whodet {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Inputs

struct InputItem {
    fs::path path;
    std::string id;
    bool manifest = false;
};

bool is_image_path(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".ppm" || ext == ".pgm";
}

/// Files and directories (expanded to their sorted .ppm/.pgm/.json files).
std::vector<InputItem> expand_inputs(const std::vector<std::string>& paths) {
    std::vector<fs::path> files;
    for (const auto& p : paths) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> inDir;
            for (const auto& e : fs::directory_iterator(p))
                if (e.is_regular_file() && (is_image_path(e.path()) || e.path().extension() == ".json"))
                    inDir.push_back(e.path());
            std::sort(inDir.begin(), inDir.end());
            files.insert(files.end(), inDir.begin(), inDir.end());
        } else if (fs::exists(p)) {
            files.emplace_back(p);
        } else {
            throw ValidationError("input '" + p + "' does not exist");
        }
    }
    if (files.empty()) throw ValidationError("no input images or manifests given");
    std::vector<InputItem> items;
    for (const auto& f : files) {
        InputItem item{f, f.stem().string(), f.extension() == ".json"};
        if (item.manifest) {
            const PyramidManifest m = read_manifest(f);
            if (!m.image.empty()) item.id = m.image;
        } else if (!is_image_path(f)) {
            throw ValidationError("input '" + f.string() + "' is neither a PPM/PGM image nor a JSON manifest");
        }
        items.push_back(std::move(item));
    }
    const bool manifests = items.front().manifest;
    for (const auto& i : items)
        if (i.manifest != manifests)
            throw ValidationError("inputs mix images and precomputed feature manifests");
    return items;
}

FeaturePyramid load_raw_pyramid(const InputItem& item, const FeaturePipeline& pipeline, int intervals, int minCells) {
    if (item.manifest) return build_pyramid(read_manifest(item.path), intervals, minCells);
    return pipeline.rawPyramid(read_image(item.path), intervals, minCells);
}

/// Extractor configuration implied by the inputs: HOG for images, the
/// channels and geometry of the first manifest for precomputed features.
FeatureExtractorConfig infer_extractor(const std::vector<InputItem>& items, int intervals, int maxDim) {
    FeatureExtractorConfig cfg;
    cfg.maxImageDimension = maxDim;
    if (!items.front().manifest) return cfg;
    const PyramidManifest m = read_manifest(items.front().path);
    const FeaturePyramid p = build_pyramid(m, intervals, 1);
    if (p.levels.empty()) throw ValidationError(items.front().path.string() + ": manifest has no usable levels");
    cfg.kind = ExtractorKind::Precomputed;
    cfg.rawChannels = p.channels();
    cfg.geometry = p.levels.front().geometry();
    cfg.layers = static_cast<int>(m.levels.front().files.size());
    cfg.manifest = items.front().path;
    return cfg;
}

FeaturePipeline make_pipeline(const FeatureExtractorConfig& extractor, const std::string& scalerPath,
                              const std::string& pcaPath) {
    FeaturePipeline p;
    p.extractor = extractor;
    if (!scalerPath.empty()) p.scaler = load_scaler(scalerPath);
    if (!pcaPath.empty()) p.pca = load_pca(pcaPath);
    p.validate();
    return p;
}

int default_jobs() {
    if (const char* env = std::getenv("WHODET_JOBS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Calls fn(index, worker) for every index, spreading indices over `jobs`
/// threads. The first exception is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
    const int workers = static_cast<int>(std::min<std::size_t>(std::max(jobs, 1), std::max<std::size_t>(n, 1)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex errorMutex;
    const auto body = [&](int worker) {
        for (;;) {
            const std::size_t i = next++;
            if (i >= n) return;
            try {
                fn(i, worker);
            } catch (...) {
                const std::lock_guard lock(errorMutex);
                if (!error) error = std::current_exception();
                next = n;
                return;
            }
        }
    };
    if (workers == 1) {
        body(0);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w) threads.emplace_back(body, w);
        for (auto& t : threads) t.join();
    }
    if (error) std::rethrow_exception(error);
}

std::pair<int, int> parse_cells(const std::string& text) {
    int w = 0, h = 0;
    char sep = 0;
    if (std::sscanf(text.c_str(), "%d%c%d", &w, &sep, &h) != 3 || (sep != 'x' && sep != 'X') || w < 1 || h < 1)
        throw ValidationError("cell shape '" + text + "' must look like WxH with positive integers");
    return {w, h};
}

std::string human_bytes(std::uint64_t bytes) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f GB", static_cast<double>(bytes) / 1e9);
    return buf;
}

// ---------------------------------------------------------------------------
// Options shared by several subcommands

struct Options {
    std::vector<std::string> inputs;
    std::string output;
    std::string scaler;
    std::string pca;
    std::string stats;
    std::string model;
    std::string gt;
    std::vector<std::string> detections;
    std::vector<std::string> classes;
    std::string label;
    std::string similarity;
    std::string cells;
    std::string prCsv;
    int intervals = 5;
    int maxDim = 1024;
    int jobs = 0;
    int k = 0;
    int radius = kDefaultStatsRadius;
    int channels = 0;
    int aspectClusters = 1;
    int featureClusters = 1;
    int context = 1;
    std::optional<double> regularizer;
    std::uint64_t memoryLimit = kDefaultCovarianceMemoryLimit;
    double nmsOverlap = 0.4;
    std::optional<double> nested;
    std::optional<double> threshold;
    bool allPlacements = false;
    int maxPerImage = 0;
    double iouThreshold = 0.5;
    std::uint64_t seed = 1;
    int trainImages = 50;
    int testImages = 50;
    int backgroundImages = 30;
    int width = 200;
    int height = 160;
};

// ---------------------------------------------------------------------------
// Subcommands

int cmd_learn_maxima(const Options& o, std::ostream& out) {
    const auto items = expand_inputs(o.inputs);
    const FeaturePipeline pipeline = make_pipeline(infer_extractor(items, o.intervals, o.maxDim), "", "");
    std::vector<ChannelMaximaAccumulator> acc(static_cast<std::size_t>(std::max(o.jobs, 1)));
    parallel_for(items.size(), o.jobs, [&](std::size_t i, int w) {
        for (const auto& level : load_raw_pyramid(items[i], pipeline, o.intervals, 1).levels) acc[static_cast<std::size_t>(w)].add(level);
    });
    for (std::size_t w = 1; w < acc.size(); ++w) acc[0].merge(acc[w]);
    if (acc[0].empty()) throw ValidationError("inputs produced no feature maps");
    const ChannelScaler scaler = acc[0].finalize();
    save_scaler(scaler, o.output);
    out << "channel maxima of " << scaler.channels() << " channels from " << acc[0].maps() << " maps written to "
        << o.output << "\n";
    return kExitOk;
}

int cmd_learn_pca(const Options& o, std::ostream& out) {
    const auto items = expand_inputs(o.inputs);
    const FeaturePipeline pipeline = make_pipeline(infer_extractor(items, o.intervals, o.maxDim), o.scaler, "");
    const int dim = pipeline.rawChannels();
    std::vector<CovarianceAccumulator> acc(static_cast<std::size_t>(std::max(o.jobs, 1)), CovarianceAccumulator(dim));
    parallel_for(items.size(), o.jobs, [&](std::size_t i, int w) {
        const FeaturePyramid raw = load_raw_pyramid(items[i], pipeline, o.intervals, 1);
        for (const auto& level : pipeline.process(raw).levels) acc[static_cast<std::size_t>(w)].add(level);
    });
    for (std::size_t w = 1; w < acc.size(); ++w) acc[0].merge(acc[w]);
    const PcaTransform pca = learn_pca(acc[0], o.k);
    save_pca(pca, o.output);
    out << "PCA " << pca.inputDim() << " -> " << pca.outputDim() << " from " << acc[0].count() << " cells written to "
        << o.output << "\n";
    return kExitOk;
}

int cmd_learn_stats(const Options& o, std::ostream& out) {
    const auto items = expand_inputs(o.inputs);
    const FeaturePipeline pipeline = make_pipeline(infer_extractor(items, o.intervals, o.maxDim), o.scaler, o.pca);
    std::vector<BackgroundStatsAccumulator> acc(static_cast<std::size_t>(std::max(o.jobs, 1)),
                                                BackgroundStatsAccumulator(pipeline.outputChannels(), o.radius));
    parallel_for(items.size(), o.jobs, [&](std::size_t i, int w) {
        const FeaturePyramid raw = load_raw_pyramid(items[i], pipeline, o.intervals, 1);
        acc[static_cast<std::size_t>(w)].add(pipeline.process(raw));
    });
    for (std::size_t w = 1; w < acc.size(); ++w) acc[0].merge(acc[w]);
    const BackgroundStats stats = acc[0].finalize();
    save_stats(stats, o.output);
    out << "background statistics (F=" << stats.channels() << ", R=" << stats.radius() << ") from "
        << stats.cellCount() << " cells written to " << o.output << "\n";
    return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
    const auto items = expand_inputs(o.inputs);
    std::map<std::string, const InputItem*> byId;
    for (const auto& i : items) byId[i.id] = &i;

    const auto gts = read_ground_truth(o.gt);
    std::string label = o.label;
    if (label.empty()) {
        for (const auto& g : gts)
            if (label.empty()) label = g.label;
            else if (g.label != label) throw ValidationError("ground truth holds several classes; pass --class");
    }
    std::vector<GroundTruth> positives;
    for (const auto& g : gts)
        if (g.label == label && !g.difficult) {
            if (!byId.count(g.image)) throw ValidationError("no input image for ground-truth image '" + g.image + "'");
            positives.push_back(g);
        }
    if (positives.empty()) throw ValidationError("no positive samples of class '" + label + "'");

    const FeaturePipeline pipeline = make_pipeline(infer_extractor(items, o.intervals, o.maxDim), o.scaler, o.pca);
    const BackgroundStats stats = load_stats(o.stats);
    if (stats.channels() != pipeline.outputChannels())
        throw ConfigMismatchError("statistics have " + std::to_string(stats.channels()) +
                                  " channels, the feature pipeline delivers " +
                                  std::to_string(pipeline.outputChannels()));
    LearnerConfig lc;
    lc.regularizer = o.regularizer;
    lc.memoryLimitBytes = o.memoryLimit;
    validate(lc);
    std::optional<std::pair<int, int>> fixedCells;
    if (!o.cells.empty()) fixedCells = parse_cells(o.cells);
    if (positives.size() < static_cast<std::size_t>(o.aspectClusters) * o.featureClusters)
        throw ValidationError("cannot form " + std::to_string(o.aspectClusters) + "x" +
                              std::to_string(o.featureClusters) + " clusters from " +
                              std::to_string(positives.size()) + " positives");

    std::vector<double> aspects;
    for (const auto& g : positives) aspects.push_back(g.box.h / g.box.w);
    const std::vector<int> groups = cluster_by_aspect(aspects, o.aspectClusters, o.seed);
    const int nGroups = *std::max_element(groups.begin(), groups.end()) + 1;

    DetectorModel model;
    model.className = label;
    model.pipeline = pipeline;
    model.intervalsPerOctave = o.intervals;
    for (int g = 0; g < nGroups; ++g) {
        std::vector<const GroundTruth*> members;
        std::vector<Box> boxes;
        for (std::size_t i = 0; i < positives.size(); ++i)
            if (groups[i] == g) {
                members.push_back(&positives[i]);
                boxes.push_back(positives[i].box);
            }
        const auto [M, N] = fixedCells ? *fixedCells : choose_model_size(boxes, pipeline.geometry(), stats.radius());
        const ModelShape shape{M, N, pipeline.outputChannels()};
        if (M - 1 > stats.radius() || N - 1 > stats.radius())
            throw RadiusError("model of " + std::to_string(M) + "x" + std::to_string(N) + " cells needs statistics radius " +
                              std::to_string(std::max(M, N) - 1) + ", " + o.stats + " has radius " +
                              std::to_string(stats.radius()));

        std::vector<FeatureMap> samples(members.size());
        parallel_for(members.size(), o.jobs, [&](std::size_t i, int) {
            const GroundTruth& gt = *members[i];
            const InputItem& item = *byId.at(gt.image);
            if (item.manifest) {
                const FeaturePyramid raw = build_pyramid(read_manifest(item.path), o.intervals, 1);
                samples[i] = extract_positive_from_pyramid(pipeline.process(raw), gt.box, shape);
            } else {
                const Image img = read_image(item.path);
                Box box = gt.box;
                box.x = std::max(0.0, box.x);
                box.y = std::max(0.0, box.y);
                box.w = std::min(box.w, img.width() - box.x);
                box.h = std::min(box.h, img.height() - box.y);
                samples[i] = extract_positive(img, box, shape, pipeline, o.context);
            }
        });

        std::vector<int> sub(samples.size(), 0);
        if (o.featureClusters > 1) {
            const Whitener whitener(stats, shape, lc);
            std::vector<Eigen::VectorXd> whitened;
            for (const auto& s : samples) whitened.push_back(whitener.whiten(s));
            sub = cluster_by_features(whitened, std::min<int>(o.featureClusters, static_cast<int>(samples.size())), o.seed);
        }
        const int nSub = *std::max_element(sub.begin(), sub.end()) + 1;
        for (int f = 0; f < nSub; ++f) {
            std::vector<FeatureMap> cluster;
            for (std::size_t i = 0; i < samples.size(); ++i)
                if (sub[i] == f) cluster.push_back(samples[i]);
            const LdaResult r = learn_exemplar_lda(cluster, stats, lc);
            out << "component " << model.components.size() << ": " << M << "x" << N << " cells, " << cluster.size()
                << " positives, lambda " << r.lambda << " after " << r.escalations << " escalations\n";
            model.components.push_back(r.component);
        }
    }
    save_model(model, o.output);
    out << "model with " << model.components.size() << " components written to " << o.output << "\n";
    return kExitOk;
}

int cmd_detect(const Options& o, std::ostream& out) {
    const DetectorModel model = load_model(o.model);
    const auto items = expand_inputs(o.inputs);
    NmsConfig nmsConfig{o.nmsOverlap, o.nested};
    validate(nmsConfig);
    std::vector<double> thresholds;
    if (o.allPlacements) thresholds.assign(model.components.size(), -std::numeric_limits<double>::infinity());
    else if (o.threshold) thresholds.assign(model.components.size(), *o.threshold);

    int minCells = std::numeric_limits<int>::max();
    for (const auto& c : model.components) minCells = std::min({minCells, c.filter.width(), c.filter.height()});

    std::vector<std::vector<Detection>> perImage(items.size());
    parallel_for(items.size(), o.jobs, [&](std::size_t i, int) {
        const FeaturePyramid raw = load_raw_pyramid(items[i], model.pipeline, model.intervalsPerOctave, minCells);
        auto dets = nms(detect(raw, model, thresholds, items[i].id), nmsConfig);
        if (o.maxPerImage > 0 && dets.size() > static_cast<std::size_t>(o.maxPerImage))
            dets.resize(static_cast<std::size_t>(o.maxPerImage));
        perImage[i] = std::move(dets);
    });
    std::vector<Detection> all;
    for (auto& d : perImage) all.insert(all.end(), d.begin(), d.end());
    write_detections(all, o.output);
    out << all.size() << " detections in " << items.size() << " inputs written to " << o.output << "\n";
    return kExitOk;
}

std::vector<Detection> load_sorted_detections(const std::string& path) {
    auto dets = read_detections(path);
    std::stable_sort(dets.begin(), dets.end(), detection_before);
    return dets;
}

int cmd_optimize_threshold(const Options& o, std::ostream& out) {
    DetectorModel model = load_model(o.model);
    const auto dets = load_sorted_detections(o.detections.front());
    const auto gts = read_ground_truth(o.gt);
    const std::string label = o.label.empty() ? model.className : o.label;
    const auto best =
        best_component_thresholds(dets, gts, label, static_cast<int>(model.components.size()), o.iouThreshold);
    for (std::size_t c = 0; c < best.size(); ++c) {
        if (best[c]) model.components[c].threshold = *best[c];
        out << "component " << c << ": threshold " << model.components[c].threshold
            << (best[c] ? "" : " (unchanged, no true positive)") << "\n";
    }
    save_model(model, o.output);
    return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    const auto dets = load_sorted_detections(o.detections.front());
    const auto gts = read_ground_truth(o.gt);
    std::string label = o.label;
    if (label.empty() && !gts.empty()) label = gts.front().label;
    const EvalReport report = evaluate(dets, gts, label, o.iouThreshold);
    if (!o.output.empty()) write_report_json(report, label, o.output);
    if (!o.prCsv.empty()) write_pr_csv(report, o.prCsv);
    out << "class " << label << ": AP " << report.ap << ", best F1 " << report.bestF1 << ", TP "
        << report.truePositives << ", FP " << report.falsePositives << ", FN " << report.falseNegatives
        << (report.noGroundTruth ? " (no ground truth; AP reported as 0)" : "") << "\n";
    return kExitOk;
}

int cmd_diagnose(const Options& o, std::ostream& out, std::ostream& err) {
    if (o.detections.size() != o.classes.size())
        throw ValidationError("pass one --class per --detections file");
    const auto gts = read_ground_truth(o.gt);
    const SimilarityMap similarity = o.similarity.empty() ? SimilarityMap{} : read_similarity(o.similarity);
    std::vector<std::string> warnings;
    std::vector<FpDistribution> dists;
    std::vector<ImpactReport> impacts;
    for (std::size_t i = 0; i < o.classes.size(); ++i) {
        const auto dets = load_sorted_detections(o.detections[i]);
        const ClassAnalysis a = analyze_class(dets, gts, o.classes[i], similarity, o.iouThreshold, &warnings);
        if (auto d = fp_distribution(a, gts, {}, &warnings)) dists.push_back(std::move(*d));
        impacts.push_back(impact_analysis(a, gts));
        const auto& im = impacts.back();
        out << "class " << o.classes[i] << ": AP " << im.baselineAp;
        for (const auto& e : im.entries) {
            out << ", " << to_string(e.type) << " removed " << std::showpos << e.removedDelta;
            if (e.correctedDelta) out << " corrected " << *e.correctedDelta;
            out << std::noshowpos;
        }
        out << "\n";
    }
    fs::create_directories(o.output);
    write_fp_distribution_csv(dists, fs::path(o.output) / "fp_distribution.csv");
    write_impact_csv(impacts, fs::path(o.output) / "impact.csv");
    for (const auto& w : warnings) err << "warning: " << w << "\n";
    return kExitOk;
}

int cmd_estimate_memory(const Options& o, std::ostream& out) {
    const auto [w, h] = parse_cells(o.cells);
    const std::uint64_t bytes = estimate_covariance_bytes({w, h, o.channels});
    out << bytes << " bytes (" << human_bytes(bytes) << ") for the " << w << "x" << h << "x" << o.channels
        << " covariance in single precision\n";
    return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
    SynthConfig cfg;
    cfg.seed = o.seed;
    cfg.trainImages = o.trainImages;
    cfg.testImages = o.testImages;
    cfg.backgroundImages = o.backgroundImages;
    cfg.width = o.width;
    cfg.height = o.height;
    const SynthCorpus c = write_synth_corpus(o.output, cfg);
    out << "synthetic corpus: " << cfg.backgroundImages << " background, " << c.train.size() << " train, "
        << c.test.size() << " test images in " << o.output << "\n";
    return kExitOk;
}

int cmd_info(const Options& o, std::ostream& out) {
    const DetectorModel m = load_model(o.model);
    const auto& ex = m.pipeline.extractor;
    out << "class: " << m.className << "\n"
        << "format version: " << m.formatVersion << "\n"
        << "features: " << to_string(ex.kind) << ", " << m.pipeline.rawChannels() << " raw channels, cell "
        << m.pipeline.geometry().cellWidth << "x" << m.pipeline.geometry().cellHeight << "\n"
        << "scaler: " << (m.pipeline.scaler ? "yes" : "no") << "\n"
        << "pca: " << (m.pipeline.pca ? std::to_string(m.pipeline.pca->outputDim()) + " components" : "no") << "\n"
        << "intervals per octave: " << m.intervalsPerOctave << "\n";
    for (std::size_t i = 0; i < m.components.size(); ++i) {
        const auto& c = m.components[i];
        out << "component " << i << ": " << c.filter.width() << "x" << c.filter.height() << "x" << c.filter.channels()
            << ", bias " << c.bias << ", threshold " << c.threshold << "\n";
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Whitened-feature object detector: pre-learning, training, detection and evaluation", "whodet"};
    app.require_subcommand(1);
    Options o;
    o.jobs = default_jobs();

    const auto addInputs = [&](CLI::App* s, const std::string& what) {
        s->add_option("--input,-i", o.inputs, what + " (PPM/PGM images, JSON manifests or directories)")->required();
    };
    const auto addPyramid = [&](CLI::App* s) {
        s->add_option("--intervals", o.intervals, "pyramid levels per octave")->check(CLI::PositiveNumber);
        s->add_option("--max-dim", o.maxDim, "downscale images whose larger side exceeds this")->check(CLI::PositiveNumber);
    };
    const auto addJobs = [&](CLI::App* s) {
        s->add_option("--jobs,-j", o.jobs, "worker threads (default: WHODET_JOBS or all cores)")->check(CLI::PositiveNumber);
    };

    auto* maxima = app.add_subcommand("learn-maxima", "learn per-channel maxima for feature scaling");
    addInputs(maxima, "background corpus");
    maxima->add_option("--output,-o", o.output, "scaler text file")->required();
    addPyramid(maxima);
    addJobs(maxima);

    auto* pca = app.add_subcommand("learn-pca", "learn a PCA projection of (scaled) features");
    addInputs(pca, "background corpus");
    pca->add_option("--scaler", o.scaler, "channel maxima from learn-maxima");
    pca->add_option("--k", o.k, "output dimension")->required()->check(CLI::PositiveNumber);
    pca->add_option("--output,-o", o.output, "PCA JSON file")->required();
    addPyramid(pca);
    addJobs(pca);

    auto* stats = app.add_subcommand("learn-stats", "learn background mean and autocorrelation");
    addInputs(stats, "background corpus");
    stats->add_option("--scaler", o.scaler, "channel maxima from learn-maxima");
    stats->add_option("--pca", o.pca, "PCA from learn-pca");
    stats->add_option("--radius,-R", o.radius, "autocorrelation radius in cells")->check(CLI::NonNegativeNumber);
    stats->add_option("--output,-o", o.output, "statistics file")->required();
    addPyramid(stats);
    addJobs(stats);

    auto* train = app.add_subcommand("train", "train an exemplar-LDA mixture from positive boxes");
    addInputs(train, "training images");
    train->add_option("--gt", o.gt, "positive boxes as ground-truth JSON lines")->required();
    train->add_option("--class", o.label, "class to train (default: the only class in --gt)");
    train->add_option("--stats", o.stats, "background statistics")->required();
    train->add_option("--scaler", o.scaler, "channel maxima used for the statistics");
    train->add_option("--pca", o.pca, "PCA used for the statistics");
    train->add_option("--cells", o.cells, "fixed model size WxH in cells (default: chosen from the boxes)");
    train->add_option("--aspect-clusters", o.aspectClusters, "aspect-ratio clusters")->check(CLI::PositiveNumber);
    train->add_option("--feature-clusters", o.featureClusters, "feature clusters per aspect cluster")->check(CLI::PositiveNumber);
    train->add_option("--context", o.context, "context cells around each positive")->check(CLI::NonNegativeNumber);
    train->add_option("--regularizer", o.regularizer, "absolute initial ridge (default: 1e-7 x mean variance)");
    train->add_option("--memory-limit", o.memoryLimit, "refuse covariances estimated above this many bytes");
    train->add_option("--seed", o.seed, "clustering seed");
    train->add_option("--output,-o", o.output, "model file")->required();
    addPyramid(train);
    addJobs(train);

    auto* det = app.add_subcommand("detect", "run a model over images or feature manifests");
    det->add_option("--model,-m", o.model, "model file")->required();
    addInputs(det, "images to search");
    det->add_option("--output,-o", o.output, "detections JSON lines")->required();
    det->add_option("--nms", o.nmsOverlap, "NMS IoU threshold");
    det->add_option("--nested", o.nested, "also suppress boxes covering more than this fraction of a kept box");
    auto* thr = det->add_option("--threshold", o.threshold, "score threshold for all components");
    det->add_flag("--all", o.allPlacements, "report every placement regardless of thresholds")->excludes(thr);
    det->add_option("--max-per-image", o.maxPerImage, "keep at most this many detections per image (0: all)");
    addJobs(det);

    auto* opt = app.add_subcommand("optimize-threshold", "set component thresholds to their F1-optimal scores");
    opt->add_option("--model,-m", o.model, "model file")->required();
    opt->add_option("--detections,-d", o.detections, "detections JSON lines")->required()->expected(1);
    opt->add_option("--gt", o.gt, "ground truth JSON lines")->required();
    opt->add_option("--class", o.label, "class (default: the model's class)");
    opt->add_option("--iou", o.iouThreshold, "IoU for true positives");
    opt->add_option("--output,-o", o.output, "updated model file")->required();

    auto* ev = app.add_subcommand("evaluate", "precision/recall and average precision");
    ev->add_option("--detections,-d", o.detections, "detections JSON lines")->required()->expected(1);
    ev->add_option("--gt", o.gt, "ground truth JSON lines")->required();
    ev->add_option("--class", o.label, "class (default: class of the first ground truth)");
    ev->add_option("--iou", o.iouThreshold, "IoU for true positives");
    ev->add_option("--output,-o", o.output, "report JSON");
    ev->add_option("--pr-csv", o.prCsv, "precision/recall CSV");

    auto* diag = app.add_subcommand("diagnose", "false-positive types and their impact on AP");
    diag->add_option("--detections,-d", o.detections, "detections JSON lines, one file per class")->required();
    diag->add_option("--class", o.classes, "class of each detections file, in the same order")->required();
    diag->add_option("--gt", o.gt, "ground truth JSON lines")->required();
    diag->add_option("--similarity", o.similarity, "JSON map from class to similar classes");
    diag->add_option("--iou", o.iouThreshold, "IoU for true positives");
    diag->add_option("--output,-o", o.output, "directory for fp_distribution.csv and impact.csv")->required();

    auto* mem = app.add_subcommand("estimate-memory", "bytes needed for a model's covariance matrix");
    mem->add_option("--cells", o.cells, "model size WxH in cells")->required();
    mem->add_option("--channels", o.channels, "feature channels")->required()->check(CLI::PositiveNumber);

    auto* syn = app.add_subcommand("synth", "write a seeded synthetic corpus with a planted pattern");
    syn->add_option("--output,-o", o.output, "output directory")->required();
    syn->add_option("--seed", o.seed, "random seed");
    syn->add_option("--train", o.trainImages, "training images")->check(CLI::NonNegativeNumber);
    syn->add_option("--test", o.testImages, "test images")->check(CLI::NonNegativeNumber);
    syn->add_option("--background", o.backgroundImages, "background images")->check(CLI::NonNegativeNumber);
    syn->add_option("--width", o.width, "image width")->check(CLI::PositiveNumber);
    syn->add_option("--height", o.height, "image height")->check(CLI::PositiveNumber);

    auto* info = app.add_subcommand("info", "summarize a model file");
    info->add_option("--model,-m", o.model, "model file")->required();

    std::vector<std::string> argvStore{"whodet"};
    argvStore.insert(argvStore.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argvStore) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (maxima->parsed()) return cmd_learn_maxima(o, out);
        if (pca->parsed()) return cmd_learn_pca(o, out);
        if (stats->parsed()) return cmd_learn_stats(o, out);
        if (train->parsed()) return cmd_train(o, out);
        if (det->parsed()) return cmd_detect(o, out);
        if (opt->parsed()) return cmd_optimize_threshold(o, out);
        if (ev->parsed()) return cmd_evaluate(o, out);
        if (diag->parsed()) return cmd_diagnose(o, out, err);
        if (mem->parsed()) return cmd_estimate_memory(o, out);
        if (syn->parsed()) return cmd_synth(o, out);
        if (info->parsed()) return cmd_info(o, out);
    } catch (const ConfigMismatchError& e) {
        err << "error: feature pipeline mismatch: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const MemoryLimitError& e) {
        err << "error: " << e.what() << " (estimate " << human_bytes(e.estimate()) << ")\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace whodet
