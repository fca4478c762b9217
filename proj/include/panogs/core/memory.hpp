#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <memory>
#include <new>
#include <utility>
#include <vector>

namespace panogs {

/// Live/peak byte counter for buffers allocated through `TrackingAllocator`.
///
/// The counter is shared by every buffer allocated while it is the active
/// counter of the allocating thread (see `MemoryScope`). Buffers keep a
/// reference to the counter they were allocated under, so releasing a buffer
/// after its scope has ended still decrements the right counter.
class MemoryCounter {
public:
    void add(std::size_t bytes) noexcept {
        const auto now = current_.fetch_add(bytes) + bytes;
        auto peak = peak_.load();
        while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
        }
    }

    void sub(std::size_t bytes) noexcept { current_.fetch_sub(bytes); }

    std::size_t current() const noexcept { return current_.load(); }
    std::size_t peak() const noexcept { return peak_.load(); }

    /// Restart peak tracking from the current live size.
    void reset_peak() noexcept { peak_.store(current_.load()); }

private:
    std::atomic<std::size_t> current_{0};
    std::atomic<std::size_t> peak_{0};
};

namespace detail {
inline std::shared_ptr<MemoryCounter>& active_counter() {
    thread_local std::shared_ptr<MemoryCounter> counter;
    return counter;
}
} // namespace detail

/// Makes `counter` the active counter of this thread for the scope's lifetime.
class MemoryScope {
public:
    explicit MemoryScope(std::shared_ptr<MemoryCounter> counter)
        : previous_(std::exchange(detail::active_counter(), std::move(counter))) {}
    ~MemoryScope() { detail::active_counter() = std::move(previous_); }

    MemoryScope(const MemoryScope&) = delete;
    MemoryScope& operator=(const MemoryScope&) = delete;

private:
    std::shared_ptr<MemoryCounter> previous_;
};

template <typename T>
class TrackingAllocator {
public:
    using value_type = T;
    using propagate_on_container_move_assignment = std::true_type;
    using propagate_on_container_swap = std::true_type;
    using propagate_on_container_copy_assignment = std::false_type;

    TrackingAllocator() noexcept : counter_(detail::active_counter()) {}
    template <typename U>
    TrackingAllocator(const TrackingAllocator<U>& other) noexcept : counter_(other.counter()) {}

    T* allocate(std::size_t n) {
        auto* p = static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{alignof(T)}));
        if (counter_) counter_->add(n * sizeof(T));
        return p;
    }

    void deallocate(T* p, std::size_t n) noexcept {
        ::operator delete(p, std::align_val_t{alignof(T)});
        if (counter_) counter_->sub(n * sizeof(T));
    }

    // Copies are charged to whichever counter is active where the copy happens.
    TrackingAllocator select_on_container_copy_construction() const { return TrackingAllocator(); }

    const std::shared_ptr<MemoryCounter>& counter() const noexcept { return counter_; }

    template <typename U>
    bool operator==(const TrackingAllocator<U>& other) const noexcept {
        return counter_ == other.counter();
    }

private:
    std::shared_ptr<MemoryCounter> counter_;
};

/// Numeric buffer whose bytes are charged to the active `MemoryCounter`.
template <typename T>
using tracked_vector = std::vector<T, TrackingAllocator<T>>;

} // namespace panogs
