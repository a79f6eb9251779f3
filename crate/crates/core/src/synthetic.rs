//! Synthetic micro-corpus: small arithmetic programs padded with a removable
//! 0.2 s busy-wait. The fast variant is the same program without the wait.

use crate::corpus::{TaskInstance, UnitTest};

pub const BUSY_WAIT_SECS: f64 = 0.2;

const HEADER: &str = "a,b=map(int,input().split())\n";

fn op_for(index: usize) -> (char, fn(i64, i64) -> i64) {
    // 3 of every 5 tasks add; the rest multiply or subtract
    match index % 5 {
        3 => ('*', |a, b| a * b),
        4 => ('-', |a, b| a - b),
        _ => ('+', |a, b| a + b),
    }
}

fn busy_wait(index: usize) -> String {
    match index % 3 {
        0 => format!("import time\nt=time.time()\nwhile time.time()-t<{BUSY_WAIT_SECS}:\n    pass\n"),
        1 => format!("import time\nend=time.perf_counter()+{BUSY_WAIT_SECS}\nwhile time.perf_counter()<end:\n    x=0\n"),
        _ => format!("import time\ns=time.monotonic()\nn=0\nwhile time.monotonic()-s<{BUSY_WAIT_SECS}:\n    n+=1\n"),
    }
}

/// Task `index` of the family; deterministic.
pub fn busy_wait_task(index: usize) -> TaskInstance {
    let (op, f) = op_for(index);
    let body = format!("print(a{op}b)\n");
    let slow_source = format!("{HEADER}{}{body}", busy_wait(index));
    let fast_source = format!("{HEADER}{body}");
    let tests = (0..2)
        .map(|k| {
            let a = (index * 7 + k * 3 + 2) as i64;
            let b = (index * 3 + k * 5 + 1) as i64;
            UnitTest {
                input: format!("{a} {b}\n"),
                expected_output: f(a, b).to_string(),
            }
        })
        .collect();
    TaskInstance {
        id: format!("busy-{index:03}"),
        slow_source,
        fast_source,
        tests,
        executable: false,
    }
}

pub fn busy_wait_family(n: usize) -> Vec<TaskInstance> {
    (0..n).map(busy_wait_task).collect()
}
