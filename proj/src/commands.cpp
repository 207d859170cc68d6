// SPDX-License-Identifier: Apache-2.0
#include "cmseg/commands.hpp"

#include <Eigen/Core>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "cmseg/errors.hpp"
#include "cmseg/metrics.hpp"
#include "cmseg/nifti.hpp"
#include "cmseg/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace cmseg {
namespace {

constexpr int kStrictDefaultThreads = 2;

// --- config reading helpers -------------------------------------------------

class ErrorList {
public:
    void add(const std::string& msg) { messages_.push_back(msg); }
    bool empty() const { return messages_.empty(); }
    [[noreturn]] void raise() const {
        std::string joined = "invalid configuration:";
        for (const auto& m : messages_) joined += "\n  - " + m;
        throw ValidationError(joined);
    }
    void raise_if_any() const {
        if (!empty()) raise();
    }

private:
    std::vector<std::string> messages_;
};

void check_keys(const ordered_json& obj, const std::string& where,
                const std::vector<std::string>& allowed, ErrorList& errors) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            errors.add(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read_field(const ordered_json& obj, const std::string& where, const std::string& key, T& out,
                ErrorList& errors) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const std::exception&) {
        errors.add(where + "." + key + ": wrong type");
    }
}

void read_pair(const ordered_json& obj, const std::string& where, const std::string& key,
               std::vector<ModalityId>& out, ErrorList& errors) {
    if (!obj.contains(key)) return;
    try {
        std::vector<std::string> names = obj.at(key).get<std::vector<std::string>>();
        std::vector<ModalityId> pair;
        for (const auto& n : names) pair.push_back(modality_from_string(n));
        out = std::move(pair);
    } catch (const std::exception& e) {
        errors.add(where + "." + key + ": " + e.what());
    }
}

void read_size3(const ordered_json& obj, const std::string& where, const std::string& key,
                std::array<Index, 3>& out, ErrorList& errors) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<std::array<Index, 3>>();
    } catch (const std::exception&) {
        errors.add(where + "." + key + ": expected an array of three integers");
    }
}

void parse_synth(const ordered_json& s, PhantomConfig& out, ErrorList& errors) {
    check_keys(s, "synth",
               {"grid_size", "n_subjects", "val_count", "lesion_count_min", "lesion_count_max",
                "intensity_map", "noise_sigma", "seed"},
               errors);
    read_size3(s, "synth", "grid_size", out.grid_size, errors);
    read_field(s, "synth", "n_subjects", out.n_subjects, errors);
    read_field(s, "synth", "val_count", out.val_count, errors);
    read_field(s, "synth", "lesion_count_min", out.lesion_count_min, errors);
    read_field(s, "synth", "lesion_count_max", out.lesion_count_max, errors);
    read_field(s, "synth", "intensity_map", out.intensity_map, errors);
    read_field(s, "synth", "noise_sigma", out.noise_sigma, errors);
    read_field(s, "synth", "seed", out.seed, errors);
}

void parse_cmft(const ordered_json& s, CmftConfig& out, std::string& split, ErrorList& errors) {
    check_keys(s, "cmft",
               {"pair_a", "pair_b", "patch_size", "foreground_rule", "base_filters", "depth", "lambda",
                "lr", "steps", "seed", "checkpoint_every", "lr_linear_decay", "objective", "resume_from",
                "split"},
               errors);
    read_pair(s, "cmft", "pair_a", out.pairs.pair_a, errors);
    read_pair(s, "cmft", "pair_b", out.pairs.pair_b, errors);
    read_size3(s, "cmft", "patch_size", out.patch_size, errors);
    read_field(s, "cmft", "foreground_rule", out.foreground_rule, errors);
    read_field(s, "cmft", "base_filters", out.base_filters, errors);
    read_field(s, "cmft", "depth", out.depth, errors);
    read_field(s, "cmft", "lambda", out.lambda, errors);
    read_field(s, "cmft", "lr", out.lr, errors);
    read_field(s, "cmft", "steps", out.steps, errors);
    read_field(s, "cmft", "seed", out.seed, errors);
    read_field(s, "cmft", "checkpoint_every", out.checkpoint_every, errors);
    read_field(s, "cmft", "lr_linear_decay", out.lr_linear_decay, errors);
    read_field(s, "cmft", "objective", out.objective, errors);
    read_field(s, "cmft", "resume_from", out.resume_from, errors);
    read_field(s, "cmft", "split", split, errors);
}

void parse_cmff(const ordered_json& s, CmffConfig& out, std::string& split, ErrorList& errors) {
    check_keys(s, "cmff",
               {"pair_a", "pair_b", "patch_size", "foreground_rule", "base_filters", "depth", "lr",
                "steps", "seed", "checkpoint_every", "lr_linear_decay", "init_mode", "variant",
                "cmft_checkpoint", "resume_from", "split"},
               errors);
    read_pair(s, "cmff", "pair_a", out.pairs.pair_a, errors);
    read_pair(s, "cmff", "pair_b", out.pairs.pair_b, errors);
    read_size3(s, "cmff", "patch_size", out.patch_size, errors);
    read_field(s, "cmff", "foreground_rule", out.foreground_rule, errors);
    read_field(s, "cmff", "base_filters", out.base_filters, errors);
    read_field(s, "cmff", "depth", out.depth, errors);
    read_field(s, "cmff", "lr", out.lr, errors);
    read_field(s, "cmff", "steps", out.steps, errors);
    read_field(s, "cmff", "seed", out.seed, errors);
    read_field(s, "cmff", "checkpoint_every", out.checkpoint_every, errors);
    read_field(s, "cmff", "lr_linear_decay", out.lr_linear_decay, errors);
    if (s.contains("init_mode")) {
        try {
            out.init_mode = cmff_init_mode_from_string(s.at("init_mode").get<std::string>());
        } catch (const std::exception& e) {
            errors.add(std::string("cmff.init_mode: ") + e.what());
        }
    }
    if (s.contains("variant")) {
        try {
            out.variant = cmff_variant_from_string(s.at("variant").get<std::string>());
        } catch (const std::exception& e) {
            errors.add(std::string("cmff.variant: ") + e.what());
        }
    }
    read_field(s, "cmff", "cmft_checkpoint", out.cmft_checkpoint, errors);
    read_field(s, "cmff", "resume_from", out.resume_from, errors);
    read_field(s, "cmff", "split", split, errors);
}

ordered_json apply_overrides(ordered_json root, const std::vector<std::string>& overrides,
                             ErrorList& errors) {
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) {
            errors.add("override '" + ov + "' is not of the form section.key=value");
            continue;
        }
        const std::string path = ov.substr(0, eq);
        const std::string value_str = ov.substr(eq + 1);
        ordered_json value;
        try {
            value = ordered_json::parse(value_str);
        } catch (const std::exception&) {
            value = value_str;  // bare strings need no quotes
        }
        ordered_json* node = &root;
        std::size_t start = 0;
        for (;;) {
            const auto dot = path.find('.', start);
            const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
            if (key.empty()) {
                errors.add("override '" + ov + "' has an empty key segment");
                break;
            }
            if (dot == std::string::npos) {
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            if (!node->is_object() && !node->is_null()) {
                errors.add("override '" + ov + "' descends into a non-object");
                break;
            }
            if (node->is_null()) *node = ordered_json::object();
            start = dot + 1;
        }
    }
    return root;
}

std::string hash_of(const ordered_json& j) {
    const std::string s = j.dump();
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(s.data(), s.size())));
    return buf;
}

ordered_json resolved_json(const RunConfig& cfg) {
    return ordered_json{
        {"data_root", cfg.data_root},
        {"output_dir", cfg.output_dir},
        {"strict_deterministic", cfg.strict_deterministic},
        {"threads", cfg.threads},
        {"synth",
         {{"grid_size", cfg.synth.grid_size},
          {"n_subjects", cfg.synth.n_subjects},
          {"val_count", cfg.synth.val_count},
          {"lesion_count_min", cfg.synth.lesion_count_min},
          {"lesion_count_max", cfg.synth.lesion_count_max},
          {"intensity_map", cfg.synth.intensity_map},
          {"noise_sigma", cfg.synth.noise_sigma},
          {"seed", cfg.synth.seed}}},
        {"cmft",
         {{"pair_a", [&] { ordered_json a = ordered_json::array(); for (auto m : cfg.cmft.pairs.pair_a) a.push_back(to_string(m)); return a; }()},
          {"pair_b", [&] { ordered_json a = ordered_json::array(); for (auto m : cfg.cmft.pairs.pair_b) a.push_back(to_string(m)); return a; }()},
          {"patch_size", cfg.cmft.patch_size},
          {"foreground_rule", cfg.cmft.foreground_rule},
          {"base_filters", cfg.cmft.base_filters},
          {"depth", cfg.cmft.depth},
          {"lambda", cfg.cmft.lambda},
          {"lr", cfg.cmft.lr},
          {"steps", cfg.cmft.steps},
          {"seed", cfg.cmft.seed},
          {"checkpoint_every", cfg.cmft.checkpoint_every},
          {"lr_linear_decay", cfg.cmft.lr_linear_decay},
          {"objective", cfg.cmft.objective},
          {"resume_from", cfg.cmft.resume_from},
          {"split", cfg.cmft_split}}},
        {"cmff",
         {{"pair_a", [&] { ordered_json a = ordered_json::array(); for (auto m : cfg.cmff.pairs.pair_a) a.push_back(to_string(m)); return a; }()},
          {"pair_b", [&] { ordered_json a = ordered_json::array(); for (auto m : cfg.cmff.pairs.pair_b) a.push_back(to_string(m)); return a; }()},
          {"patch_size", cfg.cmff.patch_size},
          {"foreground_rule", cfg.cmff.foreground_rule},
          {"base_filters", cfg.cmff.base_filters},
          {"depth", cfg.cmff.depth},
          {"lr", cfg.cmff.lr},
          {"steps", cfg.cmff.steps},
          {"seed", cfg.cmff.seed},
          {"checkpoint_every", cfg.cmff.checkpoint_every},
          {"lr_linear_decay", cfg.cmff.lr_linear_decay},
          {"init_mode", to_string(cfg.cmff.init_mode)},
          {"variant", to_string(cfg.cmff.variant)},
          {"cmft_checkpoint", cfg.cmff.cmft_checkpoint},
          {"resume_from", cfg.cmff.resume_from},
          {"split", cfg.cmff_split}}},
        {"predict", {{"checkpoint", cfg.predict_checkpoint}, {"split", cfg.predict_split}}},
        {"evaluate",
         {{"pred_dir", cfg.evaluate_pred_dir},
          {"split", cfg.evaluate_split},
          {"report_csv", cfg.evaluate_report_csv}}}};
}

void write_resolved_config(const RunConfig& cfg, const std::string& command) {
    fs::create_directories(cfg.output_dir);
    std::ofstream out(fs::path(cfg.output_dir) / ("resolved_" + command + ".json"));
    if (!out) throw RuntimeError("cannot write resolved config under " + cfg.output_dir);
    out << resolved_json(cfg).dump(2) << "\n";
}

void apply_threads(const RunConfig& cfg) {
    int n = cfg.threads;
    if (n <= 0) n = cfg.strict_deterministic ? kStrictDefaultThreads : 0;
    if (n > 0) {
#ifdef _OPENMP
        omp_set_num_threads(n);
#endif
        Eigen::setNbThreads(n);
    }
}

std::string section_hash(const RunConfig& cfg, const std::string& command) {
    return hash_of(resolved_json(cfg).at(command == "train-cmft" ? "cmft" : "cmff"));
}

}  // namespace

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path);
    ordered_json root;
    try {
        root = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw ValidationError("config " + path + " is not valid JSON: " + e.what());
    }
    if (!root.is_object()) throw ValidationError("config " + path + " must be a JSON object");

    ErrorList errors;
    root = apply_overrides(std::move(root), overrides, errors);

    check_keys(root, "config",
               {"data_root", "output_dir", "strict_deterministic", "threads", "synth", "cmft", "cmff",
                "predict", "evaluate"},
               errors);

    RunConfig cfg;
    read_field(root, "config", "data_root", cfg.data_root, errors);
    read_field(root, "config", "output_dir", cfg.output_dir, errors);
    read_field(root, "config", "strict_deterministic", cfg.strict_deterministic, errors);
    read_field(root, "config", "threads", cfg.threads, errors);
    if (root.contains("synth")) parse_synth(root.at("synth"), cfg.synth, errors);
    if (root.contains("cmft")) parse_cmft(root.at("cmft"), cfg.cmft, cfg.cmft_split, errors);
    if (root.contains("cmff")) parse_cmff(root.at("cmff"), cfg.cmff, cfg.cmff_split, errors);
    if (root.contains("predict")) {
        check_keys(root.at("predict"), "predict", {"checkpoint", "split"}, errors);
        read_field(root.at("predict"), "predict", "checkpoint", cfg.predict_checkpoint, errors);
        read_field(root.at("predict"), "predict", "split", cfg.predict_split, errors);
    }
    if (root.contains("evaluate")) {
        check_keys(root.at("evaluate"), "evaluate", {"pred_dir", "split", "report_csv"}, errors);
        read_field(root.at("evaluate"), "evaluate", "pred_dir", cfg.evaluate_pred_dir, errors);
        read_field(root.at("evaluate"), "evaluate", "split", cfg.evaluate_split, errors);
        read_field(root.at("evaluate"), "evaluate", "report_csv", cfg.evaluate_report_csv, errors);
    }
    errors.raise_if_any();

    if (const char* env_root = std::getenv("CMSEG_OUTPUT_ROOT");
        env_root && *env_root && !cfg.output_dir.empty() && !fs::path(cfg.output_dir).is_absolute())
        cfg.output_dir = (fs::path(env_root) / cfg.output_dir).string();
    return cfg;
}

void validate_run_config(const RunConfig& cfg, const std::string& command) {
    ErrorList errors;
    if (cfg.output_dir.empty()) errors.add("output_dir must be set");
    if (cfg.data_root.empty()) errors.add("data_root must be set");
    if (cfg.threads < 0) errors.add("threads must be >= 0");

    const auto require_exists = [&](const std::string& p, const std::string& what) {
        if (p.empty())
            errors.add(what + " must be set");
        else if (!fs::exists(p))
            errors.add(what + " does not exist: " + p);
    };

    try {
        if (command == "synth") {
            cfg.synth.validate();
        } else if (command == "train-cmft") {
            cfg.cmft.validate();
            require_exists(cfg.data_root, "data_root");
            if (!cfg.cmft.resume_from.empty()) require_exists(cfg.cmft.resume_from, "cmft.resume_from");
        } else if (command == "train-cmff") {
            cfg.cmff.validate();
            require_exists(cfg.data_root, "data_root");
            if (cfg.cmff.init_mode != CmffInitMode::Random && cfg.cmff.resume_from.empty())
                require_exists(cfg.cmff.cmft_checkpoint, "cmff.cmft_checkpoint");
            if (!cfg.cmff.resume_from.empty()) require_exists(cfg.cmff.resume_from, "cmff.resume_from");
        } else if (command == "predict") {
            require_exists(cfg.data_root, "data_root");
            require_exists(cfg.predict_checkpoint, "predict.checkpoint");
        } else if (command == "evaluate") {
            require_exists(cfg.data_root, "data_root");
            require_exists(cfg.evaluate_pred_dir, "evaluate.pred_dir");
        } else {
            errors.add("unknown command '" + command + "'");
        }
    } catch (const ValidationError& e) {
        errors.add(e.what());
    }
    errors.raise_if_any();
}

int cmd_synth(const RunConfig& cfg) {
    apply_threads(cfg);
    const auto records = synth_phantom(cfg.synth, cfg.data_root);
    write_resolved_config(cfg, "synth");
    std::cout << "synth: wrote " << records.size() << " subjects under " << cfg.data_root << "\n";
    return 0;
}

int cmd_train_cmft(const RunConfig& cfg) {
    apply_threads(cfg);
    const auto records = scan_dataset(cfg.data_root, cfg.cmft_split);
    write_resolved_config(cfg, "train-cmft");
    run_cmft(cfg.cmft, records, cfg.output_dir, section_hash(cfg, "train-cmft"));
    std::cout << "train-cmft: finished " << cfg.cmft.steps << " steps; checkpoint_final.cmck written to "
              << cfg.output_dir << "\n";
    return 0;
}

int cmd_train_cmff(const RunConfig& cfg) {
    apply_threads(cfg);
    const auto records = scan_dataset(cfg.data_root, cfg.cmff_split);
    write_resolved_config(cfg, "train-cmff");
    run_cmff(cfg.cmff, records, cfg.output_dir, section_hash(cfg, "train-cmff"));
    std::cout << "train-cmff: finished " << cfg.cmff.steps << " steps; checkpoint_final.cmck written to "
              << cfg.output_dir << "\n";
    return 0;
}

int cmd_predict(const RunConfig& cfg) {
    apply_threads(cfg);
    const CmffModelState state = state_from_checkpoint(load_checkpoint(cfg.predict_checkpoint));
    const auto records = scan_dataset(cfg.data_root, cfg.predict_split);
    write_resolved_config(cfg, "predict");
    fs::create_directories(cfg.output_dir);
    for (const auto& rec : records) {
        const LoadedSubject raw = load_subject(rec);
        ModalityVolumes normalized;
        for (const auto& [m, v] : raw.volumes) normalized.emplace(m, z_normalize(v));
        const SegOutput seg = predict(state, normalized);
        const std::string out_path =
            (fs::path(cfg.output_dir) / (rec.subject_id + "_pred.nii.gz")).string();
        write_nifti_labels(out_path, seg.final_labels);
    }
    std::cout << "predict: wrote " << records.size() << " label volumes to " << cfg.output_dir << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    apply_threads(cfg);
    const auto records = scan_dataset(cfg.data_root, cfg.evaluate_split);
    std::vector<std::string> missing_preds, missing_labels;
    for (const auto& rec : records) {
        if (!fs::exists(fs::path(cfg.evaluate_pred_dir) / (rec.subject_id + "_pred.nii.gz")))
            missing_preds.push_back(rec.subject_id);
        if (!rec.label_path) missing_labels.push_back(rec.subject_id);
    }
    const auto join = [](const std::vector<std::string>& v) {
        std::string s;
        for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
        return s;
    };
    if (!missing_preds.empty())
        throw ValidationError("evaluate: predictions missing for subjects: " + join(missing_preds));
    if (!missing_labels.empty())
        throw ValidationError("evaluate: ground-truth labels missing for subjects: " + join(missing_labels));

    std::vector<SubjectMetrics> per_subject;
    for (const auto& rec : records) {
        const LabelVolume gt = read_nifti_labels(*rec.label_path);
        const LabelVolume pred = read_nifti_labels(
            (fs::path(cfg.evaluate_pred_dir) / (rec.subject_id + "_pred.nii.gz")).string());
        per_subject.push_back(SubjectMetrics{rec.subject_id, evaluate_subject(pred, gt)});
    }
    const MetricsReport report = aggregate(per_subject);
    write_resolved_config(cfg, "evaluate");
    const std::string csv_path = (fs::path(cfg.output_dir) / cfg.evaluate_report_csv).string();
    std::ofstream out(csv_path);
    if (!out) throw RuntimeError("cannot write metrics report " + csv_path);
    out << to_csv(report);
    std::cout << "evaluate: " << records.size() << " subjects; mean dice WT/TC/ET = "
              << report.region_means[0].dice << "/" << report.region_means[1].dice << "/"
              << report.region_means[2].dice << "; report " << csv_path << "\n";
    return 0;
}

int run_command(const std::string& command, const std::string& config_path,
                const std::vector<std::string>& overrides, std::string& error_out) {
    try {
        const RunConfig cfg = load_run_config(config_path, overrides);
        validate_run_config(cfg, command);
        if (command == "synth") return cmd_synth(cfg);
        if (command == "train-cmft") return cmd_train_cmft(cfg);
        if (command == "train-cmff") return cmd_train_cmff(cfg);
        if (command == "predict") return cmd_predict(cfg);
        if (command == "evaluate") return cmd_evaluate(cfg);
        error_out = "unknown command '" + command + "'";
        return 1;
    } catch (const ValidationError& e) {
        error_out = e.what();
        return 1;
    } catch (const std::exception& e) {
        error_out = e.what();
        return 2;
    }
}

}  // namespace cmseg
