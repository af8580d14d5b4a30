#include "knobtune/errors.hpp"
#include "knobtune/telemetry.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace knobtune {

namespace {

std::optional<std::string> slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::optional<double> read_energy_uj(const std::string& zone) {
    auto s = slurp(zone + "/energy_uj");
    if (!s)
        return std::nullopt;
    return std::stod(*s);
}

struct CpuTimes {
    double busy = 0;
    double total = 0;
};

// Aggregate utilization over the scope from /proc/stat.
std::optional<CpuTimes> read_cpu_times(const CpuMask& scope) {
    auto s = slurp("/proc/stat");
    if (!s)
        return std::nullopt;
    CpuTimes acc;
    std::istringstream in(*s);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("cpu", 0) != 0 || line.size() < 4 || !isdigit(line[3]))
            continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        int cpu = std::stoi(tag.substr(3));
        if (std::find(scope.begin(), scope.end(), cpu) == scope.end())
            continue;
        double user = 0, nice = 0, sys = 0, idle = 0, iowait = 0, irq = 0, softirq = 0;
        ls >> user >> nice >> sys >> idle >> iowait >> irq >> softirq;
        acc.busy += user + nice + sys + irq + softirq;
        acc.total += user + nice + sys + idle + iowait + irq + softirq;
    }
    if (acc.total == 0)
        return std::nullopt;
    return acc;
}

std::map<std::string, double> read_cstate_times_us(const CpuMask& scope) {
    std::map<std::string, double> out;
    for (int cpu : scope) {
        const std::string base =
            "/sys/devices/system/cpu/cpu" + std::to_string(cpu) + "/cpuidle";
        for (int st = 0;; ++st) {
            const std::string dir = base + "/state" + std::to_string(st);
            auto name = slurp(dir + "/name");
            auto time = slurp(dir + "/time");
            if (!name || !time)
                break;
            std::string n = *name;
            while (!n.empty() && (n.back() == '\n' || n.back() == ' '))
                n.pop_back();
            out[n] += std::stod(*time);
        }
    }
    return out;
}

class LinuxTelemetrySource : public TelemetrySource {
public:
    MeasurementRecord collect(int window_index, double duration_s, const CpuMask& scope,
                              const Configuration&, const WorkloadAdapter* adapter) override {
        MeasurementRecord rec;
        rec.window_index = window_index;
        rec.ts_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count();
        rec.system.window_seconds = duration_s;

        const auto pkg0 = read_energy_uj("/sys/class/powercap/intel-rapl:0");
        const auto load0 = read_cpu_times(scope);
        const auto cs0 = read_cstate_times_us(scope);

        // perf stat runs for the whole window and provides the counters;
        // without it the session cannot proceed.
        std::string cmd = "perf stat -a -C " + render_cpu_mask(scope) +
                          " -x, -e instructions,cycles,cache-references,cache-misses,context-switches" +
                          " sleep " + std::to_string(duration_s) + " 2>&1";
        std::array<char, 512> buf{};
        std::string out;
        FILE* pipe = popen(cmd.c_str(), "r");
        if (!pipe)
            throw SessionError("telemetry: cannot launch perf stat");
        while (fgets(buf.data(), buf.size(), pipe))
            out += buf.data();
        const int rc = pclose(pipe);
        if (rc != 0)
            throw SessionError("telemetry: perf stat unavailable or failed:\n" + out);

        std::istringstream lines(out);
        std::string line;
        while (std::getline(lines, line)) {
            std::istringstream ls(line);
            std::string value, unit, event;
            std::getline(ls, value, ',');
            std::getline(ls, unit, ',');
            std::getline(ls, event, ',');
            if (event.empty() || value.empty() || value == "<not counted>" ||
                value == "<not supported>")
                continue;
            try {
                rec.system.counters[event] = std::stod(value);
            } catch (const std::exception&) {
                // Missing counters degrade gracefully; derived values that
                // need them simply stay absent.
            }
        }
        if (rec.system.counters.count("cycles") && rec.system.counters.at("cycles") > 0)
            rec.system.ipc = derive_ipc(rec.system.counters);

        if (pkg0) {
            if (auto pkg1 = read_energy_uj("/sys/class/powercap/intel-rapl:0"))
                rec.system.package_power_w = (*pkg1 - *pkg0) / 1e6 / duration_s;
        }
        if (auto dram0 = read_energy_uj("/sys/class/powercap/intel-rapl:0:0")) {
            if (auto dram1 = read_energy_uj("/sys/class/powercap/intel-rapl:0:0"))
                rec.system.dram_power_w = (*dram1 - *dram0) / 1e6 / duration_s;
        }
        if (load0) {
            if (auto load1 = read_cpu_times(scope)) {
                const double db = load1->busy - load0->busy;
                const double dt = load1->total - load0->total;
                if (dt > 0)
                    rec.system.cpu_load = db / dt;
            }
        }
        const auto cs1 = read_cstate_times_us(scope);
        const double span_us = duration_s * 1e6 * static_cast<double>(scope.size());
        for (const auto& [state, t1] : cs1) {
            auto it = cs0.find(state);
            if (it == cs0.end() || span_us <= 0)
                continue;
            double frac = (t1 - it->second) / span_us;
            rec.system.cstate_residency[state] = std::clamp(frac, 0.0, 1.0);
        }

        if (adapter) {
            std::string raw;
            const std::string file = adapter->source_file();
            if (!file.empty()) {
                // Tail the attachment file: only bytes written during this
                // window belong to it.
                std::ifstream in(file, std::ios::binary);
                if (in) {
                    in.seekg(0, std::ios::end);
                    const auto end = in.tellg();
                    auto start = offsets_.count(file) ? offsets_[file] : std::streampos(0);
                    if (start > end)
                        start = 0;
                    in.seekg(start);
                    raw.resize(static_cast<std::size_t>(end - start));
                    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
                    offsets_[file] = end;
                }
            }
            const auto samples = adapter->parse_window(raw);
            if (!samples.empty()) {
                rec.app = adapter->reduce_samples(samples);
                rec.noise_pct = relative_iqr_pct(samples);
            }
        }
        return rec;
    }

private:
    std::map<std::string, std::streampos> offsets_;
};

} // namespace

std::unique_ptr<TelemetrySource> make_linux_telemetry_source() {
    return std::make_unique<LinuxTelemetrySource>();
}

} // namespace knobtune
