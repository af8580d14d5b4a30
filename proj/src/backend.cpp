#include "knobtune/backend.hpp"

#include <fstream>
#include <sstream>

namespace knobtune {

std::optional<std::string> SimBackend::read(const std::string& path) {
    std::lock_guard<std::mutex> g(mu_);
    auto it = state_.find(path);
    if (it == state_.end())
        return std::nullopt;
    return it->second;
}

bool SimBackend::write(const std::string& path, const std::string& value,
                       std::string* error) {
    std::lock_guard<std::mutex> g(mu_);
    if (throw_countdown_ >= 0 && throw_countdown_-- == 0)
        throw std::runtime_error("sim backend: injected write exception at " + path);
    auto fp = fail_paths_.find(path);
    if (fp != fail_paths_.end() && fp->second != 0) {
        if (fp->second > 0)
            --fp->second;
        if (error)
            *error = "injected failure on " + path;
        return false;
    }
    if (fail_countdown_ >= 0 && fail_countdown_-- == 0) {
        if (error)
            *error = "injected failure (countdown) on " + path;
        return false;
    }
    state_[path] = value;
    log_.push_back({seq_++, scope_stack_.empty() ? "" : scope_stack_.back(), path, value});
    return true;
}

void SimBackend::begin_scope(const std::string& name) {
    std::lock_guard<std::mutex> g(mu_);
    scope_stack_.push_back(name);
}

void SimBackend::end_scope() {
    std::lock_guard<std::mutex> g(mu_);
    if (!scope_stack_.empty())
        scope_stack_.pop_back();
}

void SimBackend::preload(const std::string& path, const std::string& value) {
    std::lock_guard<std::mutex> g(mu_);
    state_[path] = value;
}

std::map<std::string, std::string> SimBackend::state() const {
    std::lock_guard<std::mutex> g(mu_);
    return state_;
}

void SimBackend::fail_after(int writes) {
    std::lock_guard<std::mutex> g(mu_);
    fail_countdown_ = writes;
}

void SimBackend::fail_on_path(const std::string& path, int times) {
    std::lock_guard<std::mutex> g(mu_);
    fail_paths_[path] = times;
}

void SimBackend::throw_on_write(int nth_from_now) {
    std::lock_guard<std::mutex> g(mu_);
    throw_countdown_ = nth_from_now;
}

void SimBackend::clear_faults() {
    std::lock_guard<std::mutex> g(mu_);
    fail_countdown_ = -1;
    throw_countdown_ = -1;
    fail_paths_.clear();
}

std::optional<std::string> LinuxFileBackend::read(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string s = ss.str();
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' '))
        s.pop_back();
    return s;
}

bool LinuxFileBackend::write(const std::string& path, const std::string& value,
                             std::string* error) {
    std::ofstream out(path);
    if (!out) {
        if (error)
            *error = "cannot open for write: " + path;
        return false;
    }
    out << value << "\n";
    out.flush();
    if (!out) {
        if (error)
            *error = "write failed: " + path;
        return false;
    }
    return true;
}

std::optional<std::string> OverlayBackend::read(const std::string& path) {
    auto it = overlay_.find(path);
    if (it != overlay_.end())
        return it->second;
    return under_.read(path);
}

bool OverlayBackend::write(const std::string& path, const std::string& value,
                           std::string*) {
    overlay_[path] = value;
    ++writes_;
    return true;
}

} // namespace knobtune
