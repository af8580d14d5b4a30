#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace knobtune {

// Raw read/write surface over host paths. Implementations must tolerate
// concurrent reads; all writes arrive serialized under the guardrail lock.
class ActuationBackend {
public:
    virtual ~ActuationBackend() = default;

    virtual std::optional<std::string> read(const std::string& path) = 0;
    // Returns false and fills `error` on failure.
    virtual bool write(const std::string& path, const std::string& value,
                       std::string* error) = 0;

    // Write-authority bookkeeping: the guardrail brackets apply/restore in a
    // named scope so instrumented backends can prove no one else writes.
    virtual void begin_scope(const std::string&) {}
    virtual void end_scope() {}
};

// In-memory backend with failure injection, used by the sim host and tests.
class SimBackend : public ActuationBackend {
public:
    struct LogEntry {
        std::int64_t seq = 0;
        std::string scope;  // empty when written outside apply/restore
        std::string path;
        std::string value;
    };

    std::optional<std::string> read(const std::string& path) override;
    bool write(const std::string& path, const std::string& value,
               std::string* error) override;
    void begin_scope(const std::string& name) override;
    void end_scope() override;

    void preload(const std::string& path, const std::string& value);
    std::map<std::string, std::string> state() const;
    const std::vector<LogEntry>& write_log() const { return log_; }

    // Failure injection. fail_after(n): the (n+1)-th write from now fails.
    void fail_after(int writes);
    void fail_on_path(const std::string& path, int times = -1);
    void throw_on_write(int nth_from_now);
    void clear_faults();

private:
    mutable std::mutex mu_;
    std::map<std::string, std::string> state_;
    std::vector<LogEntry> log_;
    std::vector<std::string> scope_stack_;
    std::int64_t seq_ = 0;
    int fail_countdown_ = -1;
    int throw_countdown_ = -1;
    std::map<std::string, int> fail_paths_;
};

// Writes plain text files (sysctl via /proc/sys, sysfs, debugfs, cpufreq,
// intel_pstate paths). A trailing newline is appended on writes.
class LinuxFileBackend : public ActuationBackend {
public:
    std::optional<std::string> read(const std::string& path) override;
    bool write(const std::string& path, const std::string& value,
               std::string* error) override;
};

// Dry-run wrapper: reads pass through (with read-your-writes overlay),
// writes never reach the underlying backend.
class OverlayBackend : public ActuationBackend {
public:
    explicit OverlayBackend(ActuationBackend& under) : under_(under) {}

    std::optional<std::string> read(const std::string& path) override;
    bool write(const std::string& path, const std::string& value,
               std::string* error) override;

    std::size_t suppressed_writes() const { return writes_; }

private:
    ActuationBackend& under_;
    std::map<std::string, std::string> overlay_;
    std::size_t writes_ = 0;
};

} // namespace knobtune
