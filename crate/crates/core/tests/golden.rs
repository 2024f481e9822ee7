//! Frozen trace test vector. Set `XSHARK_BLESS=1` to rewrite it after an
//! intentional format change.

use std::path::PathBuf;

use xshark::debugger::Breakpoint;
use xshark::recorder::{record, trace_from_bytes, trace_to_bytes, ExecutionTrace, RecordOptions, TraceFormat};
use xshark::replayer::{replay, ReplayOptions};
use xshark::sim::{PerfEventLog, SimConfig, Simulator};
use xshark::workloads::assemble;

const KERNEL: &str = "\
.data hbm 0x1000 u32 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16
    S_LDI s1, 0x1000
    S_LDI s2, 0x40
    S_LDI s3, 64
    S_LDI s4, 3
loop:
    DMA_ISSUE 0, hbm->vmem, s1, s2, s3
    DMA_WAIT 0
    V_LOAD v0, [s2+0]
    V_ADD v1, v1, v0
    V_STORE [s2+64], v1
    S_LDI s5, -1
    S_ADD s4, s4, s5
    S_CMP.EQ p0, s4, s0
    @p0 BR done
    BR loop
done:
    HALT
";

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden.trace")
}

fn fresh() -> ExecutionTrace {
    let kernel = assemble(KERNEL).unwrap();
    let sim = Simulator::new(SimConfig::default()).unwrap();
    let mut session = kernel.session(&sim).unwrap();
    let options = RecordOptions::new(Breakpoint::at(kernel.label("loop").unwrap()), 1000);
    record(&mut session, &options).unwrap().trace
}

#[test]
fn golden_trace_is_stable() {
    let bytes = trace_to_bytes(&fresh(), TraceFormat::Text);
    let path = golden_path();
    if std::env::var_os("XSHARK_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &bytes).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden trace present");
    assert_eq!(String::from_utf8_lossy(&golden), String::from_utf8_lossy(&bytes));
}

#[test]
fn golden_trace_decodes_and_replays() {
    let golden = trace_from_bytes(&std::fs::read(golden_path()).unwrap()).unwrap();
    assert_eq!(golden, fresh());
    assert_eq!(golden.header.start_pc, 4);
    let binary = trace_to_bytes(&golden, TraceFormat::Binary);
    assert_eq!(trace_from_bytes(&binary).unwrap(), golden);
    let mut log = PerfEventLog::new();
    replay(&golden, &SimConfig::default(), &mut log, &ReplayOptions::default()).unwrap();
    assert_eq!(log.run_end().map(|r| r.0), Some(log.end_cycle()));
}

#[test]
fn golden_trace_rejects_a_flipped_byte() {
    let mut bytes = std::fs::read(golden_path()).unwrap();
    let n = bytes.len();
    bytes[n - 10] ^= 1;
    let e = trace_from_bytes(&bytes).unwrap_err();
    assert_eq!(e.code(), "TRACE_CHECKSUM");
}
