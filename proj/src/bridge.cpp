#include "baddet/bridge.hpp"

#include "baddet/error.hpp"
#include "baddet/image_io.hpp"
#include "baddet/parallel.hpp"
#include "baddet/wire.hpp"

#include <httplib.h>

#include <atomic>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <fstream>
#include <mutex>
#include <optional>
#include <utility>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace baddet {

namespace fs = std::filesystem;

DetectionSet Detector::run(const DatasetManifest& manifest, const PixelSource& source, int workers) {
    DetectionSet out(manifest.entries.size());
    parallel_for(manifest.entries.size(), concurrent() ? workers : 1, [&](std::size_t i) {
        const AnnotatedImage& e = manifest.entries[i];
        out[i].image = e.image;
        out[i].detections = detect(source.load(e));
    });
    return out;
}

DetectionSet run_detector_batch(Detector& detector, const DatasetManifest& manifest, const PixelSource& source,
                                int workers) {
    return detector.run(manifest, source, workers);
}

namespace {

// Scratch directory removed on destruction.
class ScratchDir {
public:
    ScratchDir() {
        std::string tmpl = (fs::temp_directory_path() / "baddet-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) fail(ErrorKind::Io, "cannot create a scratch directory");
        path_ = tmpl;
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string excerpt(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    constexpr std::size_t kMax = 2000;
    if (text.size() > kMax) text = "..." + text.substr(text.size() - kMax);
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    return text.empty() ? "(no stderr output)" : text;
}

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

class ChildSession {
public:
    ChildSession(const ExternalDetectorConfig& cfg, const ClassTable& classes, const fs::path& scratch, int id)
        : timeout_(cfg.timeout), stderr_path_(scratch / ("stderr-" + std::to_string(id) + ".log")) {
        ignore_sigpipe();
        int to_child[2], from_child[2];
        if (::pipe(to_child) != 0) fail(ErrorKind::Bridge, "pipe failed: " + std::string(std::strerror(errno)));
        if (::pipe(from_child) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            fail(ErrorKind::Bridge, "pipe failed: " + std::string(std::strerror(errno)));
        }
        const int err_fd = ::open(stderr_path_.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0600);
        pid_ = ::fork();
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            if (err_fd >= 0) ::dup2(err_fd, STDERR_FILENO);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::execl("/bin/sh", "sh", "-c", cfg.command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        if (err_fd >= 0) ::close(err_fd);
        if (pid_ < 0) {
            ::close(to_child[1]);
            ::close(from_child[0]);
            fail(ErrorKind::Bridge, "fork failed: " + std::string(std::strerror(errno)));
        }
        in_ = to_child[1];
        out_ = from_child[0];
        ::fcntl(in_, F_SETFD, FD_CLOEXEC);
        ::fcntl(out_, F_SETFD, FD_CLOEXEC);

        try {
            send(encode_handshake(classes.names()));
            check_handshake_reply(receive());
        } catch (...) {
            shutdown();
            throw;
        }
    }

    ~ChildSession() { shutdown(); }

    ChildSession(const ChildSession&) = delete;
    ChildSession& operator=(const ChildSession&) = delete;

    void shutdown() {
        if (in_ >= 0) ::close(in_);
        if (out_ >= 0) ::close(out_);
        in_ = out_ = -1;
        if (pid_ > 0) {
            // Give the child a moment to exit on EOF, then make sure it is gone.
            const pid_t pid = std::exchange(pid_, -1);
            for (int i = 0; i < 50; ++i) {
                if (::waitpid(pid, nullptr, WNOHANG) == pid) return;
                ::usleep(10000);
            }
            ::kill(pid, SIGKILL);
            ::waitpid(pid, nullptr, 0);
        }
    }

    void send(const std::string& line) {
        const std::string data = line + "\n";
        std::size_t off = 0;
        while (off < data.size()) {
            const ssize_t n = ::write(in_, data.data() + off, data.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                died("write to detector failed");
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::string receive() {
        const auto deadline = std::chrono::steady_clock::now() + timeout_;
        for (;;) {
            const auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                ++lines_;
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) died("detector timed out after " + std::to_string(timeout_.count()) + " ms");
            pollfd p{out_, POLLIN, 0};
            const int r = ::poll(&p, 1, static_cast<int>(left.count()));
            if (r < 0 && errno == EINTR) continue;
            if (r == 0) continue;
            char chunk[65536];
            const ssize_t n = ::read(out_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) died("detector exited");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    // Response line number, handshake reply excluded.
    int response_line() const { return lines_ - 1; }

private:
    [[noreturn]] void died(const std::string& what) {
        std::string status;
        int st = 0;
        if (::waitpid(pid_, &st, WNOHANG) == pid_) {
            pid_ = -1;
            if (WIFEXITED(st)) status = " (exit status " + std::to_string(WEXITSTATUS(st)) + ")";
            if (WIFSIGNALED(st)) status = " (signal " + std::to_string(WTERMSIG(st)) + ")";
        }
        fail(ErrorKind::Bridge, what + status + "; stderr: " + excerpt(stderr_path_));
    }

    std::chrono::milliseconds timeout_;
    fs::path stderr_path_;
    pid_t pid_ = -1;
    int in_ = -1;
    int out_ = -1;
    std::string buffer_;
    int lines_ = 0;
};

class ExternalDetector : public Detector {
public:
    ExternalDetector(ExternalDetectorConfig cfg, ClassTable classes) : cfg_(std::move(cfg)), classes_(std::move(classes)) {
        if (cfg_.command.empty()) fail(ErrorKind::InvalidInput, "external detector command is empty");
        if (cfg_.batch_size < 1) fail(ErrorKind::InvalidInput, "batch size must be at least 1");
        if (cfg_.timeout.count() <= 0) fail(ErrorKind::InvalidInput, "timeout must be positive");
    }

    std::vector<Detection> detect(const Raster& image) override {
        std::lock_guard lock(mu_);
        if (!session_) session_ = std::make_unique<ChildSession>(cfg_, classes_, scratch_.path(), next_id_++);
        const fs::path file = scratch_.path() / ("single-" + std::to_string(next_file_++) + ".png");
        save_png(image, file);
        session_->send(encode_request(file.string(), image.width(), image.height()));
        auto rec = validate(*session_, file.string());
        fs::remove(file);
        return std::move(rec.detections);
    }

    DetectionSet run(const DatasetManifest& manifest, const PixelSource& source, int workers) override {
        const std::size_t n = manifest.entries.size();
        DetectionSet out(n);
        const std::size_t shards = std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers))));
        int first_id = 0;
        {
            std::lock_guard lock(mu_);
            first_id = next_id_;
            next_id_ += static_cast<int>(shards);
        }
        parallel_for(shards, static_cast<int>(shards), [&](std::size_t s) {
            const std::size_t lo = n * s / shards, hi = n * (s + 1) / shards;
            if (lo == hi) return;
            ChildSession child(cfg_, classes_, scratch_.path(), first_id + static_cast<int>(s));
            for (std::size_t start = lo; start < hi; start += static_cast<std::size_t>(cfg_.batch_size)) {
                const std::size_t stop = std::min(hi, start + static_cast<std::size_t>(cfg_.batch_size));
                std::vector<std::string> refs;
                for (std::size_t i = start; i < stop; ++i) {
                    const AnnotatedImage& e = manifest.entries[i];
                    fs::path file;
                    if (e.pixels) {
                        file = scratch_.path() / ("image-" + std::to_string(i) + ".png");
                        save_png(*e.pixels, file);
                    } else {
                        file = fs::absolute(source.resolve(e));
                    }
                    refs.push_back(file.string());
                    child.send(encode_request(file.string(), e.width, e.height));
                }
                for (std::size_t i = start; i < stop; ++i) {
                    auto rec = validate(child, refs[i - start]);
                    out[i].image = manifest.entries[i].image;
                    out[i].detections = std::move(rec.detections);
                }
            }
        });
        return out;
    }

private:
    ImageDetections validate(ChildSession& child, const std::string& expected) {
        const std::string line = child.receive();
        auto rec = validate_detection_record(line, classes_.size(), child.response_line());
        if (rec.image != expected)
            fail(ErrorKind::Protocol, "line " + std::to_string(child.response_line()) + ": response for '" + rec.image +
                                          "' but expected '" + expected + "'");
        return rec;
    }

    ExternalDetectorConfig cfg_;
    ClassTable classes_;
    ScratchDir scratch_;
    std::mutex mu_;
    std::unique_ptr<ChildSession> session_;
    int next_id_ = 0;
    std::size_t next_file_ = 0;
};

class HttpDetector : public Detector {
public:
    HttpDetector(HttpDetectorConfig cfg, ClassTable classes)
        : cfg_(std::move(cfg)), classes_(std::move(classes)), client_(cfg_.url) {
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
        client_.set_connection_timeout(secs.count(), usecs.count());
        client_.set_read_timeout(secs.count(), usecs.count());
        client_.set_write_timeout(secs.count(), usecs.count());
        check_handshake_reply(post("/handshake", encode_handshake(classes_.names())));
    }

    std::vector<Detection> detect(const Raster& image) override {
        const fs::path file = scratch_.path() / ("single-" + std::to_string(next_file_++) + ".png");
        save_png(image, file);
        auto rec = validate_detection_record(post("/detect", encode_request(file.string(), image.width(), image.height())),
                                             classes_.size(), ++lines_);
        fs::remove(file);
        if (rec.image != file.string()) fail(ErrorKind::Protocol, "response for unexpected image '" + rec.image + "'");
        return std::move(rec.detections);
    }

    DetectionSet run(const DatasetManifest& manifest, const PixelSource& source, int) override {
        DetectionSet out(manifest.entries.size());
        for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
            const AnnotatedImage& e = manifest.entries[i];
            out[i].image = e.image;
            if (e.pixels) {
                out[i].detections = detect(*e.pixels);
                continue;
            }
            const std::string ref = fs::absolute(source.resolve(e)).string();
            auto rec = validate_detection_record(post("/detect", encode_request(ref, e.width, e.height)), classes_.size(),
                                                 ++lines_);
            if (rec.image != ref) fail(ErrorKind::Protocol, "response for unexpected image '" + rec.image + "'");
            out[i].detections = std::move(rec.detections);
        }
        return out;
    }

private:
    std::string post(const std::string& path, const std::string& body) {
        auto res = client_.Post(path, body, "application/json");
        if (!res) fail(ErrorKind::Bridge, "POST " + cfg_.url + path + " failed: " + httplib::to_string(res.error()));
        if (res->status != 200)
            fail(ErrorKind::Bridge, "POST " + cfg_.url + path + " returned HTTP " + std::to_string(res->status) + ": " +
                                        res->body.substr(0, 500));
        return res->body;
    }

    HttpDetectorConfig cfg_;
    ClassTable classes_;
    httplib::Client client_;
    ScratchDir scratch_;
    std::size_t next_file_ = 0;
    int lines_ = 0;
};

}  // namespace

std::unique_ptr<Detector> make_external_detector(const ExternalDetectorConfig& config, const ClassTable& classes) {
    return std::make_unique<ExternalDetector>(config, classes);
}

std::unique_ptr<Detector> make_http_detector(const HttpDetectorConfig& config, const ClassTable& classes) {
    return std::make_unique<HttpDetector>(config, classes);
}

}  // namespace baddet
