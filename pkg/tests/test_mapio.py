import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacha import mapio
from sacha.errors import ContractError, ParseError
from sacha.gridworld import GridMap, MapfInstance

EXAMPLE = "type octile\nheight 3\nwidth 4\nmap\n..@.\nG...\n.OT.\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestMap:
    def test_glyphs(self, tmp_path):
        grid = mapio.load_map(write(tmp_path, "a.map", EXAMPLE))
        assert grid.cells.tolist() == [
            [False, False, True, False],
            [False, False, False, False],
            [False, True, True, False],
        ]

    def test_tiny_body(self):
        grid, kind = mapio.parse_map("type octile\nheight 2\nwidth 2\nmap\n.@\n..\n")
        assert kind == "octile"
        assert np.argwhere(grid.cells).tolist() == [[0, 1]]

    def test_round_trip_is_bit_exact(self, tmp_path):
        src = write(tmp_path, "a.map", EXAMPLE)
        out = tmp_path / "b.map"
        mapio.save_map(out, mapio.load_map(src))
        assert out.read_bytes() == src.read_bytes()

    @settings(max_examples=50, deadline=None)
    @given(rows=st.lists(st.text(alphabet=".G@OT", min_size=5, max_size=5), min_size=1, max_size=6))
    def test_round_trip_property(self, rows):
        text = f"type octile\nheight {len(rows)}\nwidth 5\nmap\n" + "\n".join(rows) + "\n"
        grid, _ = mapio.parse_map(text)
        assert mapio.format_map(grid) == text

    @pytest.mark.parametrize("text, needle", [
        ("type octile\nheight 3\nwidth 2\nmap\n..\n..\n", "declared height 3"),
        ("type octile\nheight 2\nwidth 2\nmap\n..\n...\n", "columns"),
        ("type octile\nheight 1\nwidth 2\nmap\n.x\n", "unknown glyph"),
        ("type octile\nwidth 2\nmap\n..\n", "height"),
        ("height 1\nwidth 1\n.\n", "header"),
    ])
    def test_malformed(self, text, needle):
        with pytest.raises(ParseError, match=needle):
            mapio.parse_map(text)

    def test_error_names_line(self):
        with pytest.raises(ParseError) as err:
            mapio.parse_map("type octile\nheight 2\nwidth 2\nmap\n..\n.?\n")
        assert err.value.line == 6


def scen_line(sx, sy, gx, gy, w=4, h=3):
    return f"0\ta.map\t{w}\t{h}\t{sx}\t{sy}\t{gx}\t{gy}\t1.0"


class TestScen:
    grid = mapio.parse_map(EXAMPLE)[0]

    def test_first_n_records(self, tmp_path):
        p = write(tmp_path, "a.scen", "version 1\n" + "\n".join([scen_line(0, 0, 3, 0), scen_line(1, 0, 3, 2)]) + "\n")
        inst = mapio.load_scen(p, self.grid, 1)
        assert inst.starts == ((0, 0),) and inst.goals == ((0, 3),)
        assert mapio.load_scen(p, self.grid, 2).n_agents == 2

    def test_round_trip(self, tmp_path):
        inst = MapfInstance(self.grid, [(0, 0), (2, 3)], [(2, 0), (0, 1)])
        p = tmp_path / "x.scen"
        mapio.save_scen(p, inst)
        assert mapio.load_scen(p, self.grid, 2) == inst

    @pytest.mark.parametrize("records, needle", [
        ([scen_line(0, 0, 2, 0)], "goal .* not a free cell"),
        ([scen_line(9, 0, 3, 0)], "start .* not a free cell"),
        ([scen_line(0, 0, 3, 0), scen_line(0, 0, 0, 2)], "duplicate start"),
        ([scen_line(0, 0, 3, 0), scen_line(1, 0, 3, 0)], "duplicate goal"),
        ([scen_line(0, 0, 3, 0, w=5)], "map size"),
        (["0\ta.map\t4\t3\t0\t0\t3"], "9 tab-separated"),
        (["0\ta.map\t4\t3\tx\t0\t3\t0\t1.0"], "non-numeric"),
    ])
    def test_rejects_malformed(self, tmp_path, records, needle):
        p = write(tmp_path, "bad.scen", "version 1\n" + "\n".join(records) + "\n")
        with pytest.raises(ParseError, match=needle):
            mapio.load_scen(p, self.grid, len(records))

    def test_unreachable_goal(self, tmp_path):
        grid = GridMap.from_rows([".@.", ".@."])
        p = write(tmp_path, "u.scen", "version 1\n" + scen_line(0, 0, 2, 0, w=3, h=2) + "\n")
        with pytest.raises(ParseError, match="unreachable"):
            mapio.load_scen(p, grid, 1)

    def test_too_many_agents(self, tmp_path):
        p = write(tmp_path, "a.scen", "version 1\n" + scen_line(0, 0, 3, 0) + "\n")
        with pytest.raises(ContractError):
            mapio.load_scen(p, self.grid, 2)

    def test_missing_version(self, tmp_path):
        p = write(tmp_path, "a.scen", scen_line(0, 0, 3, 0) + "\n")
        with pytest.raises(ParseError, match="version"):
            mapio.load_scen(p, self.grid, 1)
