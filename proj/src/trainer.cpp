#include "atlas_istn/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "atlas_istn/error.hpp"
#include "atlas_istn/image_io.hpp"
#include "atlas_istn/metrics.hpp"
#include "atlas_istn/rng.hpp"

namespace atlas_istn::train {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Variant v) {
    switch (v) {
        case Variant::UNet: return "unet";
        case Variant::SSN: return "ssn";
        case Variant::AtlasIstn: return "atlas_istn";
    }
    return "atlas_istn";
}

Variant variant_from_string(const std::string& s) {
    if (s == "unet") return Variant::UNet;
    if (s == "ssn") return Variant::SSN;
    if (s == "atlas_istn" || s == "atlas") return Variant::AtlasIstn;
    throw InvalidArgument("unknown variant '" + s + "' (expected unet, ssn or atlas_istn)");
}

TrainConfig TrainConfig::normalized() const {
    TrainConfig c = *this;
    if (c.variant == Variant::UNet) c.model.seg.ssn_rank = 0;
    if (c.variant != Variant::AtlasIstn) {
        c.weights.omega = 0;
        c.weights.gamma = 0;
    }
    return c;
}

void TrainConfig::validate() const {
    weights.validate();
    model.validate();
    if (epochs < 0 || batch_size < 1 || !(learning_rate > 0) || checkpoint_interval < 1 || warmup_epochs < 0 ||
        exp_steps < 1 || ssn_mc_samples < 1) {
        throw InvalidArgument("train: invalid optimisation settings");
    }
    if (!(intensity_momentum >= 0 && intensity_momentum < 1)) throw InvalidArgument("train: momentum must be in [0,1)");
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"variant", to_string(c.variant)},
             {"weights", c.weights},
             {"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"learning_rate", c.learning_rate},
             {"seed", c.seed},
             {"checkpoint_interval", c.checkpoint_interval},
             {"manifest", c.manifest.generic_string()},
             {"model", c.model},
             {"warmup_epochs", c.warmup_epochs},
             {"exp_steps", c.exp_steps},
             {"intensity_momentum", c.intensity_momentum},
             {"augment", c.augment},
             {"ssn_mc_loss", c.ssn_mc_loss},
             {"ssn_mc_samples", c.ssn_mc_samples}};
}

void from_json(const json& j, TrainConfig& c) {
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.weights = j.at("weights").get<loss::LossWeights>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.checkpoint_interval = j.at("checkpoint_interval").get<int>();
    c.manifest = j.at("manifest").get<std::string>();
    c.model = j.at("model").get<nn::ModelConfig>();
    c.warmup_epochs = j.at("warmup_epochs").get<int>();
    c.exp_steps = j.at("exp_steps").get<int>();
    c.intensity_momentum = j.at("intensity_momentum").get<double>();
    c.augment = j.at("augment").get<bool>();
    c.ssn_mc_loss = j.at("ssn_mc_loss").get<bool>();
    c.ssn_mc_samples = j.at("ssn_mc_samples").get<int>();
}

json to_json(const EpochLog& e) {
    json dice = json::object();
    for (int c = 0; c < kNumClasses; ++c) dice[kClassNames[c]] = e.val_dice[c];
    return json{{"epoch", e.epoch}, {"L_S", e.seg},     {"L_a2s", e.a2s},     {"L_s2a", e.s2a},
                {"L_reg", e.reg},   {"L_HLHS", e.hlhs}, {"total", e.total},   {"val_dice", dice},
                {"val_mean_fg_dice", e.val_mean_fg_dice}};
}

EpochLog epoch_log_from_json(const json& j) {
    EpochLog e;
    e.epoch = j.at("epoch").get<int>();
    e.seg = j.at("L_S").get<double>();
    e.a2s = j.at("L_a2s").get<double>();
    e.s2a = j.at("L_s2a").get<double>();
    e.reg = j.at("L_reg").get<double>();
    e.hlhs = j.at("L_HLHS").get<double>();
    e.total = j.at("total").get<double>();
    for (int c = 0; c < kNumClasses; ++c) e.val_dice[c] = j.at("val_dice").at(kClassNames[c]).get<double>();
    e.val_mean_fg_dice = j.at("val_mean_fg_dice").get<double>();
    return e;
}

TensorSplit make_split(const std::vector<phantom::SampleRecord>& samples, std::optional<phantom::Split> which) {
    std::vector<const phantom::SampleRecord*> sel;
    for (const auto& s : samples) {
        if (!which || s.split == *which) sel.push_back(&s);
    }
    TensorSplit out;
    if (sel.empty()) return out;
    const int h = sel.front()->image.height(), w = sel.front()->image.width();
    const auto n = static_cast<int64_t>(sel.size());
    out.images = torch::empty({n, 1, h, w}, torch::kFloat32);
    out.labels = torch::empty({n, h, w}, torch::kUInt8);
    out.hlhs = torch::empty({n}, torch::kFloat32);
    for (int64_t i = 0; i < n; ++i) {
        const auto& s = *sel[i];
        if (s.image.height() != h || s.image.width() != w) throw InvalidArgument("make_split: inconsistent image sizes");
        std::memcpy(out.images[i].data_ptr<float>(), s.image.data(), sizeof(float) * s.image.size());
        std::memcpy(out.labels[i].data_ptr<std::uint8_t>(), s.labelmap.data(), s.labelmap.size());
        out.hlhs[i] = s.hlhs ? 1.0f : 0.0f;
        out.ids.push_back(s.id);
    }
    return out;
}

namespace {

torch::Tensor ssn_mc_seg_loss(const nn::SegOutput& seg, const torch::Tensor& gt_onehot, int samples,
                              std::uint64_t seed) {
    auto draws = nn::sample_seg(seg, samples, seed);  // [M,N,C,H,W]
    auto target = gt_onehot.argmax(1).unsqueeze(0).unsqueeze(2).expand({samples, -1, 1, -1, -1});
    auto logp = torch::log_softmax(draws, 2).gather(2, target).squeeze(2);  // [M,N,H,W]
    return -(torch::logsumexp(logp, 0) - std::log(static_cast<double>(samples))).mean();
}

}  // namespace

StepResult compute_losses(nn::AtlasIstn& model, const torch::Tensor& images, const torch::Tensor& gt_onehot,
                          const torch::Tensor& hlhs_labels, const loss::LossWeights& weights, int exp_steps,
                          bool ssn_mc_loss, int ssn_mc_samples, std::uint64_t mc_seed) {
    StepResult r;
    r.seg = model->seg->forward(images);
    r.seg_probs = nn::seg_probabilities(r.seg);
    if (ssn_mc_loss && r.seg.rank > 0) {
        r.parts.seg = ssn_mc_seg_loss(r.seg, gt_onehot, ssn_mc_samples, mc_seed);
    } else {
        r.parts.seg = loss::seg(gt_onehot, r.seg_probs);
    }
    if (weights.omega > 0 || weights.gamma > 0) {
        auto atlas_probs = model->atlas->probs();
        r.mapping = model->mapper->forward(r.seg_probs, atlas_probs);
        if (weights.omega > 0) {
            r.phi = transform::invert(r.mapping.velocity, r.mapping.affine, exp_steps);
            r.parts.a2s = loss::atlas_to_seg(gt_onehot, atlas_probs, r.phi.inverse);
            r.parts.s2a = loss::seg_to_atlas(gt_onehot, r.phi.forward, atlas_probs);
            r.parts.reg = transform::smoothness_penalty(r.phi.nonrigid);
        }
        if (weights.gamma > 0) {
            r.hlhs_prob = model->head->forward(r.mapping.bottleneck);
            r.parts.hlhs = loss::hlhs(hlhs_labels.to(r.hlhs_prob.scalar_type()), r.hlhs_prob);
        }
    }
    r.total = loss::total(r.parts, weights);
    return r;
}

void set_deterministic(bool on) {
    if (on) at::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(on, false);
}

TrainState init_state(const TrainConfig& config_in) {
    TrainState s;
    s.config = config_in.normalized();
    s.config.validate();
    torch::manual_seed(child_seed(s.config.seed, "train.init"));
    s.model = nn::AtlasIstn(s.config.model);
    s.optimizer = std::make_unique<torch::optim::Adam>(s.model->parameters(),
                                                       torch::optim::AdamOptions(s.config.learning_rate));
    return s;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'A', 'I', 'S', 'T', 'N', 'C', 'K', 'P'};

struct NamedTensor {
    std::string name;
    torch::Tensor tensor;
};

std::vector<NamedTensor> collect_tensors(const TrainState& s) {
    std::vector<NamedTensor> out;
    for (const auto& item : s.model->named_parameters()) out.push_back({"param/" + item.key(), item.value()});
    for (const auto& item : s.model->named_buffers()) out.push_back({"buffer/" + item.key(), item.value()});
    const auto& state = s.optimizer->state();
    for (const auto& item : s.model->named_parameters()) {
        auto it = state.find(item.value().unsafeGetTensorImpl());
        if (it == state.end()) continue;
        const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
        out.push_back({"adam/" + item.key() + "/exp_avg", st.exp_avg()});
        out.push_back({"adam/" + item.key() + "/exp_avg_sq", st.exp_avg_sq()});
    }
    return out;
}

std::string dtype_name(torch::ScalarType t) {
    if (t == torch::kFloat32) return "f32";
    if (t == torch::kFloat64) return "f64";
    throw InvalidArgument("checkpoint: unsupported dtype");
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainState& s) {
    const auto tensors = collect_tensors(s);
    json dir = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        const auto nbytes = static_cast<std::uint64_t>(t.tensor.numel() * t.tensor.element_size());
        dir.push_back({{"name", t.name},
                       {"dtype", dtype_name(t.tensor.scalar_type())},
                       {"shape", t.tensor.sizes().vec()},
                       {"offset", offset},
                       {"nbytes", nbytes}});
        offset += nbytes;
    }
    json steps = json::object();
    for (const auto& item : s.model->named_parameters()) {
        auto it = s.optimizer->state().find(item.value().unsafeGetTensorImpl());
        if (it != s.optimizer->state().end()) {
            steps[item.key()] = static_cast<const torch::optim::AdamParamState&>(*it->second).step();
        }
    }
    json history = json::array();
    for (const auto& e : s.history) history.push_back(to_json(e));
    const json header{{"format_version", kCheckpointFormatVersion},
                      {"config", s.config},
                      {"epochs_done", s.epochs_done},
                      {"best_val", s.best_val},
                      {"best_epoch", s.best_epoch},
                      {"history", history},
                      {"adam_steps", steps},
                      {"tensors", dir}};
    const std::string text = header.dump();

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
        out.write(kMagic, sizeof(kMagic));
        const std::uint32_t version = kCheckpointFormatVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : tensors) {
            auto c = t.tensor.detach().contiguous();
            out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
        }
        if (!out) throw IoError("short write to '" + path.string() + "'");
    }
    fs::rename(tmp, path);
}

TrainState load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("'" + path.string() + "' is not a checkpoint");
    if (version != kCheckpointFormatVersion) throw IoError("unsupported checkpoint format version " + std::to_string(version));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const json header = json::parse(text);

    TrainState s = init_state(header.at("config").get<TrainConfig>());
    s.epochs_done = header.at("epochs_done").get<int>();
    s.best_val = header.at("best_val").get<double>();
    s.best_epoch = header.at("best_epoch").get<int>();
    for (const auto& e : header.at("history")) s.history.push_back(epoch_log_from_json(e));

    const std::streamoff base = in.tellg();
    auto read_into = [&](const json& entry) {
        std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
        const auto dtype = entry.at("dtype").get<std::string>() == "f64" ? torch::kFloat64 : torch::kFloat32;
        auto t = torch::empty(shape, dtype);
        const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
        if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size())) throw IoError("checkpoint: bad tensor size");
        in.seekg(base + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
        in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
        if (!in) throw IoError("checkpoint '" + path.string() + "' is truncated");
        return t;
    };
    std::map<std::string, torch::Tensor> loaded;
    for (const auto& entry : header.at("tensors")) loaded[entry.at("name").get<std::string>()] = read_into(entry);

    torch::NoGradGuard guard;
    for (auto& item : s.model->named_parameters()) {
        auto it = loaded.find("param/" + item.key());
        if (it == loaded.end()) throw IoError("checkpoint is missing parameter '" + item.key() + "'");
        if (it->second.sizes() != item.value().sizes()) throw IoError("checkpoint shape mismatch for '" + item.key() + "'");
        item.value().copy_(it->second);
    }
    for (auto& item : s.model->named_buffers()) {
        auto it = loaded.find("buffer/" + item.key());
        if (it == loaded.end()) throw IoError("checkpoint is missing buffer '" + item.key() + "'");
        item.value().copy_(it->second);
    }
    const auto& steps = header.at("adam_steps");
    for (auto& item : s.model->named_parameters()) {
        if (!steps.contains(item.key())) continue;
        auto st = std::make_unique<torch::optim::AdamParamState>();
        st->step(steps.at(item.key()).get<int64_t>());
        st->exp_avg(loaded.at("adam/" + item.key() + "/exp_avg"));
        st->exp_avg_sq(loaded.at("adam/" + item.key() + "/exp_avg_sq"));
        s.optimizer->state()[item.value().unsafeGetTensorImpl()] = std::move(st);
    }
    return s;
}

// ------------------------------------------------------------------ training

LabelMap argmax_labels(const torch::Tensor& scores_chw) {
    // torch::argmax returns the first maximal index, so ties go to the lowest class.
    auto idx = scores_chw.argmax(0).to(torch::kUInt8).contiguous();
    LabelMap out(static_cast<int>(idx.size(0)), static_cast<int>(idx.size(1)));
    std::memcpy(out.data(), idx.data_ptr<std::uint8_t>(), out.size());
    return out;
}

namespace {

LabelMap label_slice(const torch::Tensor& labels, int64_t i) {
    auto t = labels[i].contiguous();
    LabelMap out(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
    std::memcpy(out.data(), t.data_ptr<std::uint8_t>(), out.size());
    return out;
}

void write_log(const fs::path& path, const std::vector<EpochLog>& history) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    for (const auto& e : history) out << to_json(e).dump() << '\n';
}

}  // namespace

std::array<double, kNumClasses> evaluate_dice(nn::AtlasIstn& model, const TensorSplit& split, int batch_size) {
    std::array<double, kNumClasses> sums{};
    if (split.size() == 0) return sums;
    auto preds = predict(model, split.images, false, false, 6, batch_size);
    for (int64_t i = 0; i < split.size(); ++i) {
        const auto gt = label_slice(split.labels, i);
        for (int c = 0; c < kNumClasses; ++c) sums[c] += eval::dice(preds[i].seg, gt, c);
    }
    for (auto& s : sums) s /= static_cast<double>(split.size());
    return sums;
}

std::vector<Prediction> predict(nn::AtlasIstn& model, const torch::Tensor& images, bool with_atlas, bool with_head,
                                int exp_steps, int batch_size) {
    torch::NoGradGuard guard;
    model->eval();
    std::vector<Prediction> out;
    const int64_t n = images.size(0);
    out.reserve(n);
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t end = std::min(n, start + batch_size);
        auto x = images.slice(0, start, end);
        auto seg = model->seg->forward(x);
        auto probs = nn::seg_probabilities(seg);
        nn::MapperOutput mapping;
        torch::Tensor atlas_img, hlhs;
        if (with_atlas || with_head) {
            auto atlas_probs = model->atlas->probs();
            mapping = model->mapper->forward(probs, atlas_probs);
            if (with_atlas) {
                auto phi = transform::invert(mapping.velocity, mapping.affine, exp_steps);
                atlas_img = transform::warp(atlas_probs, phi.inverse);
            }
            if (with_head) hlhs = model->head->forward(mapping.bottleneck);
        }
        for (int64_t i = 0; i < end - start; ++i) {
            Prediction p;
            p.seg = argmax_labels(seg.mean_logits[i]);
            if (with_atlas) p.atlas_in_image = argmax_labels(atlas_img[i]);
            if (with_head) p.hlhs_prob = hlhs[i].item<double>();
            out.push_back(std::move(p));
        }
    }
    model->train();
    return out;
}

TrainOutputs run_training(TrainState& s, const TensorSplit& train_split, const TensorSplit& val,
                          const fs::path& out_dir, const EpochCallback& on_epoch) {
    const auto& cfg = s.config;
    if (train_split.size() == 0) throw InvalidArgument("train: empty training split");
    if (val.size() == 0) throw InvalidArgument("train: empty validation split");
    if (train_split.images.size(2) != cfg.model.height || train_split.images.size(3) != cfg.model.width) {
        throw InvalidArgument("train: data size does not match the model grid");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    TrainOutputs outputs{out_dir / "checkpoint_best.ckpt", out_dir / "checkpoint_last.ckpt", out_dir / "train_log.jsonl"};
    if (!fs::exists(outputs.last_checkpoint)) save_checkpoint(outputs.last_checkpoint, s);

    const int n_classes = cfg.model.seg.n_classes;
    const int64_t n = train_split.size();
    s.model->train();
    for (int epoch = s.epochs_done; epoch < cfg.epochs; ++epoch) {
        loss::LossWeights w = cfg.weights;
        if (epoch < cfg.warmup_epochs) {
            w.omega = 0;
            w.gamma = 0;
        }
        std::vector<int64_t> order(n);
        for (int64_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(child_seed(cfg.seed, "train.epoch", static_cast<std::uint64_t>(epoch)));
        atlas_istn::shuffle(order.begin(), order.end(), rng);

        EpochLog log;
        log.epoch = epoch + 1;
        int64_t batches = 0;
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            const int64_t end = std::min(n, start + cfg.batch_size);
            auto idx = torch::from_blob(order.data() + start, {end - start}, torch::kLong).clone();
            auto x = train_split.images.index_select(0, idx);
            auto lab = train_split.labels.index_select(0, idx).to(torch::kLong);
            if (cfg.augment) {
                const int64_t dy = static_cast<int64_t>(rng() % 9) - 4, dx = static_cast<int64_t>(rng() % 9) - 4;
                x = torch::roll(x, {dy, dx}, {2, 3});
                lab = torch::roll(lab, {dy, dx}, {1, 2});
            }
            auto gt = loss::one_hot(lab, n_classes);
            auto y = train_split.hlhs.index_select(0, idx);

            s.optimizer->zero_grad(true);
            StepResult r;
            try {
                r = compute_losses(s.model, x, gt, y, w, cfg.exp_steps, cfg.ssn_mc_loss, cfg.ssn_mc_samples,
                                   child_seed(cfg.seed, "train.mc", static_cast<std::uint64_t>(epoch * 100000 + start)));
            } catch (const NumericalError& e) {
                throw TrainingDiverged(std::string("training diverged at epoch ") + std::to_string(epoch + 1) + ": " +
                                       e.what() + "; last good checkpoint: " + outputs.last_checkpoint.string());
            }
            r.total.backward();
            s.optimizer->step();

            if (w.omega > 0) {
                torch::NoGradGuard guard;
                s.model->atlas->update_intensity(transform::warp(x, r.phi.forward.detach()), cfg.intensity_momentum);
            }
            auto val_of = [](const torch::Tensor& t) { return t.defined() ? t.detach().item<double>() : 0.0; };
            log.seg += val_of(r.parts.seg);
            log.a2s += val_of(r.parts.a2s);
            log.s2a += val_of(r.parts.s2a);
            log.reg += val_of(r.parts.reg);
            log.hlhs += val_of(r.parts.hlhs);
            log.total += val_of(r.total);
            ++batches;
        }
        for (double* v : {&log.seg, &log.a2s, &log.s2a, &log.reg, &log.hlhs, &log.total}) *v /= double(batches);
        if (!std::isfinite(log.total)) {
            throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1) +
                                   "; last good checkpoint: " + outputs.last_checkpoint.string());
        }
        log.val_dice = evaluate_dice(s.model, val);
        double fg = 0;
        for (int c = 1; c < kNumClasses; ++c) fg += log.val_dice[c];
        log.val_mean_fg_dice = fg / (kNumClasses - 1);

        s.history.push_back(log);
        s.epochs_done = epoch + 1;
        if (log.val_mean_fg_dice > s.best_val) {
            s.best_val = log.val_mean_fg_dice;
            s.best_epoch = s.epochs_done;
            save_checkpoint(outputs.best_checkpoint, s);
        }
        if (s.epochs_done % cfg.checkpoint_interval == 0 || s.epochs_done == cfg.epochs) {
            save_checkpoint(outputs.last_checkpoint, s);
        }
        write_log(outputs.log, s.history);
        if (on_epoch) on_epoch(log);
    }
    if (!fs::exists(outputs.best_checkpoint)) save_checkpoint(outputs.best_checkpoint, s);
    write_log(outputs.log, s.history);
    return outputs;
}

TrainOutputs train(const TrainConfig& config, const fs::path& out_dir, const std::optional<fs::path>& resume_from,
                   const EpochCallback& on_epoch) {
    TrainState state;
    if (resume_from) {
        state = load_checkpoint(*resume_from);
        // Only the epoch budget may change on resume.
        state.config.epochs = config.epochs;
    } else {
        state = init_state(config);
    }
    const auto samples = phantom::load_dataset(state.config.manifest);
    const auto train_split = make_split(samples, phantom::Split::Train);
    const auto val_split = make_split(samples, phantom::Split::Val);
    return run_training(state, train_split, val_split, out_dir, on_epoch);
}

AtlasExport export_atlas(const TrainState& s, const fs::path& out_dir) {
    if (!s.config.uses_atlas()) {
        throw InvalidArgument("export_atlas: variant '" + to_string(s.config.variant) + "' has no atlas");
    }
    torch::NoGradGuard guard;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    AtlasExport out{out_dir / "atlas_labels.png", out_dir / "atlas_probs.npy", out_dir / "atlas_intensity.png"};
    auto probs = s.model->atlas->probs()[0].contiguous();  // [C,H,W]
    io::write_label_png(out.label_png, argmax_labels(probs));
    const std::vector<std::int64_t> shape = probs.sizes().vec();
    io::write_npy_f32(out.probs_npy, std::span<const float>(probs.data_ptr<float>(), probs.numel()), shape);
    auto inten = s.model->atlas->intensity[0][0].clamp(0, 1).contiguous();
    GrayImage g(static_cast<int>(inten.size(0)), static_cast<int>(inten.size(1)));
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.values()[i] = static_cast<std::uint8_t>(std::lround(inten.data_ptr<float>()[i] * 255.0f));
    }
    io::write_gray_png(out.intensity_png, g);
    return out;
}

double atlas_difference(const TrainState& a, const TrainState& b) {
    torch::NoGradGuard guard;
    auto pa = a.model->atlas->probs(), pb = b.model->atlas->probs();
    if (pa.sizes() != pb.sizes()) throw InvalidArgument("atlas_difference: atlas grids differ");
    return (pa - pb).abs().mean().item<double>();
}

}  // namespace atlas_istn::train
