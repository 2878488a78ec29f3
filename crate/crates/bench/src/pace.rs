// SPDX-License-Identifier: Apache-2.0

//! Fixed-rate scheduling.

use std::time::{Duration, Instant};

/// Ticks on an absolute schedule `start + k * interval`, so oversleeping one
/// tick does not shift the ones after it. Ticks missed entirely (the
/// process was stopped, say) are skipped rather than replayed.
#[derive(Debug)]
pub struct Pacer {
    start: Instant,
    interval: Duration,
    ticks: u64,
}

impl Pacer {
    pub fn new(interval: Duration) -> Self {
        Pacer {
            start: Instant::now(),
            interval: interval.max(Duration::from_nanos(1)),
            ticks: 0,
        }
    }

    /// Sleeps until the next tick. The first tick is immediate.
    pub fn wait(&mut self) {
        let interval = self.interval.as_nanos();
        let behind = self.start.elapsed().as_nanos() / interval;
        if u128::from(self.ticks) + 1 < behind {
            self.ticks = behind as u64;
        }
        let target = self.start + Duration::from_nanos((u128::from(self.ticks) * interval) as u64);
        self.ticks += 1;
        sleep_until(target);
    }
}

pub fn sleep_until(target: Instant) {
    let now = Instant::now();
    if target > now {
        std::thread::sleep(target - now);
    }
}

/// Sleeps until `spin` before `target`, then busy-waits the rest.
pub fn spin_until(target: Instant, spin: Duration) {
    sleep_until(target.checked_sub(spin).unwrap_or(target));
    while Instant::now() < target {
        std::hint::spin_loop();
    }
}

/// Lowers the kernel's timer slack for this process so short sleeps wake
/// close to their deadline. Linux only; a no-op elsewhere.
pub fn tighten_timer_slack() {
    #[cfg(target_os = "linux")]
    // SAFETY: PR_SET_TIMERSLACK takes a plain integer argument.
    unsafe {
        libc::prctl(libc::PR_SET_TIMERSLACK, 1_000 as libc::c_ulong, 0, 0, 0);
    }
}

/// Requests `SCHED_FIFO` priority 99. Returns whether the kernel agreed.
pub fn elevate_priority() -> bool {
    let param = libc::sched_param { sched_priority: 99 };
    // SAFETY: plain syscall on the calling process with a valid param.
    let rc = unsafe { libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) };
    if rc != 0 {
        log::warn!(
            "SCHED_FIFO priority 99 unavailable: {}",
            std::io::Error::last_os_error()
        );
    }
    rc == 0
}

/// `SCHED_FIFO` for the calling thread until dropped, then back to the
/// policy it had before.
pub struct RealtimeGuard {
    policy: libc::c_int,
    param: libc::sched_param,
}

impl RealtimeGuard {
    /// `None` when the kernel refuses; the caller runs unelevated.
    pub fn acquire() -> Option<RealtimeGuard> {
        let mut param = libc::sched_param { sched_priority: 0 };
        // SAFETY: queries the calling thread into a valid out-param.
        let policy = unsafe {
            let policy = libc::sched_getscheduler(0);
            libc::sched_getparam(0, &mut param);
            policy
        };
        if policy < 0 {
            return None;
        }
        let fifo = libc::sched_param { sched_priority: 99 };
        // SAFETY: as in `elevate_priority`.
        let rc = unsafe { libc::sched_setscheduler(0, libc::SCHED_FIFO, &fifo) };
        (rc == 0).then_some(RealtimeGuard { policy, param })
    }
}

impl Drop for RealtimeGuard {
    fn drop(&mut self) {
        // SAFETY: restores values read from the kernel in `acquire`.
        unsafe {
            libc::sched_setscheduler(0, self.policy, &self.param);
        }
    }
}
