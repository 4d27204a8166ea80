from hypothesis import given, strategies as st

from pairsim.isa import InstrClass
from pairsim.layout import Region
from pairsim.monitor import ArState, TriggerState
from pairsim.trace import COLUMNS, TraceRecord, format_record, parse_record, read_trace, to_csv, write_trace

records = st.builds(
    TraceRecord,
    cycle=st.integers(0, 10**6), pc=st.integers(0, 0xFFFF), region=st.sampled_from(list(Region)),
    task_id=st.none() | st.integers(0, 15), latched_task=st.none() | st.integers(0, 15),
    instr_class=st.sampled_from(list(InstrClass)), w_en=st.booleans(), r_en=st.booleans(),
    d_addr=st.integers(0, 0xFFFF), irq=st.booleans(), violation_im=st.booleans(),
    violation_pair=st.booleans(), trigger=st.booleans(), ar_en=st.integers(0, 0xFFFF),
    trigger_state=st.sampled_from(list(TriggerState)), ar_state=st.sampled_from(list(ArState)),
)


class TestCsv:
    def test_header_order(self):
        assert to_csv([]).splitlines()[0] == (
            "cycle,pc,region,task_id,latched_task,instr_class,w_en,r_en,d_addr,irq,"
            "violation_im,violation_pair,trigger,ar_en_hex,trigger_state,ar_state")
        assert len(COLUMNS) == 16

    def test_format(self):
        r = TraceRecord(12, 0x8104, Region.TR, 0, None, InstrClass.STORE, True, False, 0x1F02,
                        False, False, True, False, 0b101, TriggerState.EXEC, ArState.REVOKE)
        assert format_record(r) == "12,8104,TR,0,-,Store,1,0,1f02,0,0,1,0,0005,Exec,Revoke"

    @given(records)
    def test_roundtrip(self, r):
        assert parse_record(format_record(r)) == r

    def test_file_roundtrip(self, tmp_path):
        rs = [TraceRecord(i, 0x8000 + 4 * i, Region.RTOS_REGION, None, None, InstrClass.PLAIN,
                          False, False, 0, False, False, False, False, 7,
                          TriggerState.EXEC, ArState.EXEC) for i in range(5)]
        path = tmp_path / "t.csv"
        write_trace(path, rs)
        assert read_trace(path) == rs
        assert b"\r" not in path.read_bytes()
